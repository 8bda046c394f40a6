//! Bundled fixture molecules for tests, examples, and the sample dataset.
//!
//! Two corpora live here. `bbab64` is a 64-molecule training fixture of
//! drug-fragment-sized SMILES (8 to 18 heavy atoms) whose `heavy_atoms`
//! and `ring_count` properties are computed from the parsed graphs, so
//! the labels can never drift from the structures. `smiles_corpus` is a
//! hand-checked list of 50 strings with frozen node/edge/ring-multiset
//! triples used to pin the parser, plus a list of strings the restricted
//! grammar must reject together with the byte offset of the offending
//! character.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::graph::{AtomAlphabet, MolecularGraph};
use crate::smiles::parse_smiles;
use crate::validity::{ring_sizes, BinaryGraph};

/// Property columns carried by the fixture dataset, in column order.
pub const PROPERTY_NAMES: [&str; 2] = ["heavy_atoms", "ring_count"];

const BBAB64_SMILES: [&str; 64] = [
    "CCCCCCCC",
    "CCCCCCCCC",
    "CCCCCCCCCC",
    "CCCCCCCCCCCC",
    "CCCCCCCCCCCCCC",
    "CCCCCCCCCCCCCCCC",
    "CCCCCCCCCCCCCCCCCC",
    "CCCCCC(C)CC",
    "CC(C)CCCC(C)C",
    "CCOCCOCC",
    "CCNCCNCC",
    "CCCSCCCC",
    "NCCCCCCN",
    "OCCCCCCO",
    "CC(=O)CCCCC",
    "CCC(=O)NCCC",
    "CC(=O)OCCCC",
    "FC(F)(F)CCCCC",
    "ClCCCCCCCl",
    "BrCCCCCCBr",
    "CCCC#CCCC",
    "CC=CCCC=CC",
    "COCCCCOC",
    "CSCCCCSC",
    "NC(=O)CCCC(N)=O",
    "CCCCP(C)CC",
    "CCN(CC)C(=O)C",
    "CCCCN(CCCC)CCCC",
    "CCCCOC(=O)CCCCCCC",
    "CC1CCCCC1C",
    "CCC1CCCCC1",
    "OC1CCCCC1O",
    "Cc1ccccc1C",
    "CCc1ccccc1C",
    "COc1ccccc1O",
    "Nc1ccccc1N",
    "Clc1ccccc1Cl",
    "Cc1ccc(C)cc1",
    "CCc1ccc(O)cc1",
    "NCc1ccccc1",
    "OCc1ccccc1O",
    "CC(=O)c1ccccc1",
    "CC(N)c1ccccc1",
    "N#Cc1ccccc1C",
    "CC1CCNCC1C",
    "CN1CCCCC1C",
    "CC1CCOC1CC",
    "O=C1CCCCC1C",
    "Cc1ccncc1C",
    "CCc1ccsc1C",
    "CCc1ccoc1C",
    "OCC1CCCCC1N",
    "CC(C)c1ccccc1",
    "CCOC(=O)c1ccccc1",
    "CC(=O)Nc1ccccc1",
    "CN(C)c1ccccc1",
    "Oc1ccc(Cl)cc1",
    "COc1ccc(N)cc1",
    "CSc1ccccc1CC",
    "CCCCCCCCc1ccccc1",
    "c1ccc2ccccc2c1",
    "Cc1ccc2ccccc2c1",
    "C1CCC2(CC1)CCCC2",
    "Cc1ccc(cc1)c1ccc(C)cc1",
];

/// One fixture molecule with its derived property labels. Field order is
/// the JSONL column order.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureRecord {
    pub id: String,
    pub smiles: String,
    pub properties: BTreeMap<String, f64>,
}

/// The 64-molecule training fixture with computed properties.
pub fn bbab64() -> Vec<FixtureRecord> {
    let alphabet = AtomAlphabet::standard();
    BBAB64_SMILES
        .iter()
        .enumerate()
        .map(|(i, smiles)| {
            let graph =
                parse_smiles(smiles, &alphabet).expect("fixture strings parse by construction");
            let rings = ring_sizes(&BinaryGraph::from_molecular(&graph));
            let mut properties = BTreeMap::new();
            properties.insert("heavy_atoms".to_string(), graph.n() as f64);
            properties.insert("ring_count".to_string(), rings.len() as f64);
            FixtureRecord {
                id: format!("bbab-{i:03}"),
                smiles: (*smiles).to_string(),
                properties,
            }
        })
        .collect()
}

/// The fixture molecules parsed against `alphabet`, in dataset order.
pub fn bbab64_graphs(alphabet: &AtomAlphabet) -> Vec<MolecularGraph> {
    BBAB64_SMILES
        .iter()
        .map(|s| parse_smiles(s, alphabet).expect("fixture strings parse by construction"))
        .collect()
}

/// The fixture dataset rendered as JSONL, one record per line.
pub fn bbab64_jsonl() -> String {
    let mut out = String::new();
    for record in bbab64() {
        out.push_str(&serde_json::to_string(&record).expect("fixture records serialize"));
        out.push('\n');
    }
    out
}

/// Writes the fixture dataset to `path`.
pub fn write_bbab64(path: &Path) -> std::io::Result<()> {
    std::fs::write(path, bbab64_jsonl())
}

/// A SMILES string with its hand-checked node count, edge count, and
/// ring-basis length multiset (ascending).
#[derive(Debug, Clone, Copy)]
pub struct CorpusEntry {
    pub smiles: &'static str,
    pub nodes: usize,
    pub edges: usize,
    pub rings: &'static [usize],
}

/// Fifty hand-checked parser pins: chains, branches, every supported
/// bond symbol, single rings of each size, heteroaromatics, and fused,
/// spiro, and bridgeless multi-ring systems.
pub const SMILES_CORPUS: [CorpusEntry; 50] = [
    CorpusEntry { smiles: "C", nodes: 1, edges: 0, rings: &[] },
    CorpusEntry { smiles: "CC", nodes: 2, edges: 1, rings: &[] },
    CorpusEntry { smiles: "CCC", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "CCCC", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "CCCCCCCC", nodes: 8, edges: 7, rings: &[] },
    CorpusEntry { smiles: "CCO", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "CCN", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "COC", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "CSC", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "CC(C)C", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "CC(C)(C)C", nodes: 5, edges: 4, rings: &[] },
    CorpusEntry { smiles: "OCC(N)CO", nodes: 6, edges: 5, rings: &[] },
    CorpusEntry { smiles: "FC(F)(F)C", nodes: 5, edges: 4, rings: &[] },
    CorpusEntry { smiles: "ClCCBr", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "C=CC=C", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "C#N", nodes: 2, edges: 1, rings: &[] },
    CorpusEntry { smiles: "CC#CC", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "CC(=O)O", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "CC(=O)NC", nodes: 5, edges: 4, rings: &[] },
    CorpusEntry { smiles: "CP(C)C", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "O=C=O", nodes: 3, edges: 2, rings: &[] },
    CorpusEntry { smiles: "NCCCCN", nodes: 6, edges: 5, rings: &[] },
    CorpusEntry { smiles: "CCC(Cl)CBr", nodes: 6, edges: 5, rings: &[] },
    CorpusEntry { smiles: "IC#CI", nodes: 4, edges: 3, rings: &[] },
    CorpusEntry { smiles: "CCSCC", nodes: 5, edges: 4, rings: &[] },
    CorpusEntry { smiles: "C1CC1", nodes: 3, edges: 3, rings: &[3] },
    CorpusEntry { smiles: "C1CCC1", nodes: 4, edges: 4, rings: &[4] },
    CorpusEntry { smiles: "C1CCCC1", nodes: 5, edges: 5, rings: &[5] },
    CorpusEntry { smiles: "C1CCCCC1", nodes: 6, edges: 6, rings: &[6] },
    CorpusEntry { smiles: "C1CCCCCC1", nodes: 7, edges: 7, rings: &[7] },
    CorpusEntry { smiles: "c1ccccc1", nodes: 6, edges: 6, rings: &[6] },
    CorpusEntry { smiles: "c1ccncc1", nodes: 6, edges: 6, rings: &[6] },
    CorpusEntry { smiles: "c1ccoc1", nodes: 5, edges: 5, rings: &[5] },
    CorpusEntry { smiles: "c1ccsc1", nodes: 5, edges: 5, rings: &[5] },
    CorpusEntry { smiles: "C1CCOC1", nodes: 5, edges: 5, rings: &[5] },
    CorpusEntry { smiles: "C1CCNCC1", nodes: 6, edges: 6, rings: &[6] },
    CorpusEntry { smiles: "C1COCCO1", nodes: 6, edges: 6, rings: &[6] },
    CorpusEntry { smiles: "O=C1CCCCC1", nodes: 7, edges: 7, rings: &[6] },
    CorpusEntry { smiles: "CC1CCCCC1", nodes: 7, edges: 7, rings: &[6] },
    CorpusEntry { smiles: "Cc1ccccc1", nodes: 7, edges: 7, rings: &[6] },
    CorpusEntry { smiles: "Oc1ccccc1", nodes: 7, edges: 7, rings: &[6] },
    CorpusEntry { smiles: "Clc1ccccc1", nodes: 7, edges: 7, rings: &[6] },
    CorpusEntry { smiles: "CCc1ccccc1", nodes: 8, edges: 8, rings: &[6] },
    CorpusEntry { smiles: "COc1ccccc1", nodes: 8, edges: 8, rings: &[6] },
    CorpusEntry { smiles: "CC(=O)c1ccccc1", nodes: 9, edges: 9, rings: &[6] },
    CorpusEntry { smiles: "N#Cc1ccccc1", nodes: 8, edges: 8, rings: &[6] },
    CorpusEntry { smiles: "c1ccc2ccccc2c1", nodes: 10, edges: 11, rings: &[6, 6] },
    CorpusEntry { smiles: "C1CCC2(CC1)CCCC2", nodes: 10, edges: 11, rings: &[5, 6] },
    CorpusEntry { smiles: "C1CC1C1CC1", nodes: 6, edges: 7, rings: &[3, 3] },
    CorpusEntry { smiles: "C1Cc2ccccc2C1", nodes: 9, edges: 10, rings: &[5, 6] },
];

/// A string the restricted grammar must reject, with the byte offset the
/// error must report.
#[derive(Debug, Clone, Copy)]
pub struct RejectedEntry {
    pub smiles: &'static str,
    pub pos: usize,
}

/// Bracket, stereo, charge, and dot strings that must fail with a
/// positioned error.
pub const REJECTED_CORPUS: [RejectedEntry; 8] = [
    RejectedEntry { smiles: "[Na+]", pos: 0 },
    RejectedEntry { smiles: "C[C@H](N)O", pos: 1 },
    RejectedEntry { smiles: "C/C=C/C", pos: 1 },
    RejectedEntry { smiles: "C\\C=C\\C", pos: 1 },
    RejectedEntry { smiles: "CC.CC", pos: 2 },
    RejectedEntry { smiles: "CC[C@@H](C)O", pos: 2 },
    RejectedEntry { smiles: "c1ccc(cc1)[O-]", pos: 10 },
    RejectedEntry { smiles: "C(=O)[OH]", pos: 5 },
];
