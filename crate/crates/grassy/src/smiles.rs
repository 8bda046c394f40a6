//! Restricted SMILES parser producing hydrogen-suppressed heavy-atom graphs.
//!
//! Accepted grammar: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I
//! and aromatic b, c, n, o, p, s), bond symbols `-`, `=`, `#`, `:`, branches
//! `(` `)`, and ring closures `0`-`9` or `%NN`. Everything else (bracket
//! atoms, charges, stereochemistry, dot-disconnection, isotopes) is rejected
//! with the byte offset of the offending character. Aromatic atoms map to
//! their uppercase alphabet entry; bond multiplicity is kept only as edge
//! metadata and never changes the binary adjacency.

use crate::graph::{AtomAlphabet, GraphError, MolecularGraph};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unexpected character {ch:?} at byte {pos}")]
    UnexpectedCharacter { ch: char, pos: usize },
    #[error("{what} is not supported (byte {pos})")]
    Unsupported { what: &'static str, pos: usize },
    #[error("atom {symbol} at byte {pos} is not in the alphabet")]
    UnknownAtom { symbol: String, pos: usize },
    #[error("bond symbol at byte {pos} is not followed by an atom or ring closure")]
    DanglingBond { pos: usize },
    #[error("unbalanced branch parenthesis at byte {pos}")]
    UnbalancedBranch { pos: usize },
    #[error("ring closure {digit} opened at byte {pos} is never closed")]
    DanglingRingBond { digit: u8, pos: usize },
    #[error("ring closure {digit} at byte {pos} reconnects the opening atom to itself")]
    RingClosureSelf { digit: u8, pos: usize },
    #[error("ring closure {digit} at byte {pos} has conflicting bond orders on its two ends")]
    RingBondConflict { digit: u8, pos: usize },
    #[error("branch or ring closure at byte {pos} appears before any atom")]
    LeadingStructure { pos: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Lexical token with its byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Atom {
        symbol: &'static str,
        aromatic: bool,
        pos: usize,
    },
    Bond {
        order: u8,
        pos: usize,
    },
    BranchOpen {
        pos: usize,
    },
    BranchClose {
        pos: usize,
    },
    RingBond {
        digit: u8,
        pos: usize,
    },
}

fn bond_order(ch: u8) -> Option<u8> {
    match ch {
        b'-' => Some(1),
        b'=' => Some(2),
        b'#' => Some(3),
        b':' => Some(4),
        _ => None,
    }
}

/// Splits `s` into tokens, applying longest-match for Cl and Br and the
/// two-digit `%NN` ring-closure form.
pub fn tokenize(s: &str) -> Result<Vec<Token>, SmilesError> {
    if s.is_empty() {
        return Err(SmilesError::Empty);
    }
    let bytes = s.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let b = bytes[pos];
        match b {
            b'C' if bytes.get(pos + 1) == Some(&b'l') => {
                tokens.push(Token::Atom {
                    symbol: "Cl",
                    aromatic: false,
                    pos,
                });
                pos += 2;
            }
            b'B' if bytes.get(pos + 1) == Some(&b'r') => {
                tokens.push(Token::Atom {
                    symbol: "Br",
                    aromatic: false,
                    pos,
                });
                pos += 2;
            }
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                let symbol = match b {
                    b'B' => "B",
                    b'C' => "C",
                    b'N' => "N",
                    b'O' => "O",
                    b'P' => "P",
                    b'S' => "S",
                    b'F' => "F",
                    _ => "I",
                };
                tokens.push(Token::Atom {
                    symbol,
                    aromatic: false,
                    pos,
                });
                pos += 1;
            }
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                let symbol = match b {
                    b'b' => "B",
                    b'c' => "C",
                    b'n' => "N",
                    b'o' => "O",
                    b'p' => "P",
                    _ => "S",
                };
                tokens.push(Token::Atom {
                    symbol,
                    aromatic: true,
                    pos,
                });
                pos += 1;
            }
            b'-' | b'=' | b'#' | b':' => {
                tokens.push(Token::Bond {
                    order: bond_order(b).unwrap(),
                    pos,
                });
                pos += 1;
            }
            b'(' => {
                tokens.push(Token::BranchOpen { pos });
                pos += 1;
            }
            b')' => {
                tokens.push(Token::BranchClose { pos });
                pos += 1;
            }
            b'0'..=b'9' => {
                tokens.push(Token::RingBond {
                    digit: b - b'0',
                    pos,
                });
                pos += 1;
            }
            b'%' => {
                let d1 = bytes.get(pos + 1).copied();
                let d2 = bytes.get(pos + 2).copied();
                match (d1, d2) {
                    (Some(a), Some(c)) if a.is_ascii_digit() && c.is_ascii_digit() => {
                        tokens.push(Token::RingBond {
                            digit: (a - b'0') * 10 + (c - b'0'),
                            pos,
                        });
                        pos += 3;
                    }
                    (Some(a), _) if !a.is_ascii_digit() => {
                        return Err(SmilesError::UnexpectedCharacter {
                            ch: a as char,
                            pos: pos + 1,
                        });
                    }
                    _ => {
                        return Err(SmilesError::UnexpectedCharacter {
                            ch: '%',
                            pos,
                        });
                    }
                }
            }
            b'[' | b']' => {
                return Err(SmilesError::Unsupported {
                    what: "bracket atom",
                    pos,
                });
            }
            b'@' => {
                return Err(SmilesError::Unsupported {
                    what: "stereochemistry",
                    pos,
                });
            }
            b'/' | b'\\' => {
                return Err(SmilesError::Unsupported {
                    what: "directional bond stereochemistry",
                    pos,
                });
            }
            b'+' => {
                return Err(SmilesError::Unsupported {
                    what: "formal charge",
                    pos,
                });
            }
            b'.' => {
                return Err(SmilesError::Unsupported {
                    what: "dot-disconnected components",
                    pos,
                });
            }
            _ => {
                // Resynchronize on the char boundary so the reported
                // character is the full (possibly multi-byte) scalar.
                let ch = s[pos..].chars().next().unwrap();
                return Err(SmilesError::UnexpectedCharacter { ch, pos });
            }
        }
    }
    Ok(tokens)
}

#[derive(Debug)]
struct RingOpening {
    atom: usize,
    bond: Option<u8>,
    pos: usize,
}

/// Parses `s` into a molecular graph whose labels index into `alphabet`.
///
/// Every ring-closure digit must be paired (reuse after closing is fine);
/// branches must balance; a pending bond symbol must be consumed by an atom
/// or ring closure. Duplicate bonds between the same atom pair collapse to
/// one edge.
pub fn parse_smiles(s: &str, alphabet: &AtomAlphabet) -> Result<MolecularGraph, SmilesError> {
    let tokens = tokenize(s)?;
    let mut labels: Vec<usize> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut explicit_orders: Vec<(usize, usize, u8)> = Vec::new();
    let mut last: Option<usize> = None;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut pending_bond: Option<(u8, usize)> = None;
    let mut rings: Vec<Option<RingOpening>> = (0..100).map(|_| None).collect();

    for token in &tokens {
        match *token {
            Token::Atom { symbol, pos, .. } => {
                let label = alphabet.index_of(symbol).ok_or_else(|| {
                    SmilesError::UnknownAtom {
                        symbol: symbol.to_string(),
                        pos,
                    }
                })?;
                let idx = labels.len();
                labels.push(label);
                if let Some(prev) = last {
                    edges.push((prev, idx));
                    if let Some((order, _)) = pending_bond.take() {
                        explicit_orders.push((prev, idx, order));
                    }
                } else if let Some((_, bpos)) = pending_bond.take() {
                    return Err(SmilesError::DanglingBond { pos: bpos });
                }
                last = Some(idx);
            }
            Token::Bond { order, pos } => {
                if pending_bond.is_some() || last.is_none() {
                    return Err(SmilesError::DanglingBond { pos });
                }
                pending_bond = Some((order, pos));
            }
            Token::BranchOpen { pos } => {
                let Some(anchor) = last else {
                    return Err(SmilesError::LeadingStructure { pos });
                };
                if let Some((_, bpos)) = pending_bond {
                    return Err(SmilesError::DanglingBond { pos: bpos });
                }
                stack.push((anchor, pos));
            }
            Token::BranchClose { pos } => {
                if let Some((_, bpos)) = pending_bond {
                    return Err(SmilesError::DanglingBond { pos: bpos });
                }
                let Some((anchor, _)) = stack.pop() else {
                    return Err(SmilesError::UnbalancedBranch { pos });
                };
                last = Some(anchor);
            }
            Token::RingBond { digit, pos } => {
                let Some(here) = last else {
                    return Err(SmilesError::LeadingStructure { pos });
                };
                let slot = &mut rings[digit as usize];
                match slot.take() {
                    Some(opening) => {
                        if opening.atom == here {
                            return Err(SmilesError::RingClosureSelf { digit, pos });
                        }
                        let closing = pending_bond.take().map(|(o, _)| o);
                        let order = match (opening.bond, closing) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::RingBondConflict { digit, pos });
                            }
                            (a, b) => a.or(b),
                        };
                        edges.push((opening.atom, here));
                        if let Some(order) = order {
                            explicit_orders.push((opening.atom, here, order));
                        }
                    }
                    None => {
                        *slot = Some(RingOpening {
                            atom: here,
                            bond: pending_bond.take().map(|(o, _)| o),
                            pos,
                        });
                    }
                }
            }
        }
    }

    if let Some((_, pos)) = pending_bond {
        return Err(SmilesError::DanglingBond { pos });
    }
    if let Some(&(_, pos)) = stack.last() {
        return Err(SmilesError::UnbalancedBranch { pos });
    }
    for (digit, slot) in rings.iter().enumerate() {
        if let Some(opening) = slot {
            return Err(SmilesError::DanglingRingBond {
                digit: digit as u8,
                pos: opening.pos,
            });
        }
    }

    let n = labels.len();
    let mut graph = MolecularGraph::from_edges(n, &edges, labels, alphabet)?;
    for (u, v, order) in explicit_orders {
        graph.set_bond_order(u, v, order);
    }
    Ok(graph)
}
