//! Minimal GML reader: `node [ id .. ]` and `edge [ source .. target .. ]`
//! blocks, optionally wrapped in `graph [ .. ]`. Everything else is skipped.

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};
use crate::graph::ObservedGraph;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Word(String),
    Str(String),
}

#[derive(Debug)]
enum Value {
    Scalar(String),
    List(Vec<(String, Value, usize)>),
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '[' => {
                out.push((Token::Open, line));
                chars.next();
            }
            ']' => {
                out.push((Token::Close, line));
                chars.next();
            }
            '"' => {
                let start = line;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => {
                            if c == '\n' {
                                line += 1;
                            }
                            s.push(c);
                        }
                        None => {
                            return Err(Error::Parse {
                                line: start,
                                msg: "unterminated string".into(),
                            })
                        }
                    }
                }
                out.push((Token::Str(s), start));
            }
            _ => {
                let mut w = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '[' || c == ']' || c == '"' {
                        break;
                    }
                    w.push(c);
                    chars.next();
                }
                out.push((Token::Word(w), line));
            }
        }
    }
    Ok(out)
}

fn parse_list(
    tokens: &[(Token, usize)],
    pos: &mut usize,
    nested: Option<usize>,
) -> Result<Vec<(String, Value, usize)>> {
    let mut items = Vec::new();
    loop {
        let Some((tok, line)) = tokens.get(*pos) else {
            return match nested {
                Some(open_line) => Err(Error::Parse {
                    line: open_line,
                    msg: "unbalanced brackets: `[` never closed".into(),
                }),
                None => Ok(items),
            };
        };
        let line = *line;
        *pos += 1;
        let key = match tok {
            Token::Close if nested.is_some() => return Ok(items),
            Token::Close => {
                return Err(Error::Parse {
                    line,
                    msg: "unbalanced brackets: unexpected `]`".into(),
                })
            }
            Token::Word(k) => k.clone(),
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: "expected a key".into(),
                })
            }
        };
        let Some((val, vline)) = tokens.get(*pos) else {
            return Err(Error::Parse {
                line,
                msg: format!("key `{key}` has no value"),
            });
        };
        let vline = *vline;
        *pos += 1;
        let value = match val {
            Token::Open => Value::List(parse_list(tokens, pos, Some(vline))?),
            Token::Word(s) | Token::Str(s) => Value::Scalar(s.clone()),
            Token::Close => {
                return Err(Error::Parse {
                    line: vline,
                    msg: format!("key `{key}` has no value"),
                })
            }
        };
        items.push((key, value, line));
    }
}

fn scalar<'a>(items: &'a [(String, Value, usize)], key: &str) -> Option<&'a str> {
    items.iter().find_map(|(k, v, _)| match v {
        Value::Scalar(s) if k == key => Some(s.as_str()),
        _ => None,
    })
}

fn int_field(items: &[(String, Value, usize)], key: &str, line: usize) -> Result<i64> {
    let raw = scalar(items, key).ok_or_else(|| Error::Parse {
        line,
        msg: format!("block is missing `{key}`"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{key}` value {raw:?} is not an integer"),
    })
}

/// Parses the GML subset into an undirected unit-weight graph. Node labels
/// come from `label` (or the id), and `value` is kept as group metadata.
pub fn load_gml_subset<R: Read>(mut source: R) -> Result<ObservedGraph> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let tokens = tokenize(&text)?;
    let mut pos = 0;
    let top = parse_list(&tokens, &mut pos, None)?;
    let body = top
        .iter()
        .find_map(|(k, v, _)| match v {
            Value::List(items) if k == "graph" => Some(items),
            _ => None,
        })
        .unwrap_or(&top);

    let mut ids: HashMap<i64, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (key, value, line) in body {
        if key != "node" {
            continue;
        }
        let Value::List(items) = value else {
            return Err(Error::Parse {
                line: *line,
                msg: "`node` must be a block".into(),
            });
        };
        let id = int_field(items, "id", *line)?;
        if ids.insert(id, labels.len()).is_some() {
            return Err(Error::Validation(format!("duplicate node id {id}")));
        }
        labels.push(scalar(items, "label").map_or_else(|| id.to_string(), str::to_string));
        groups.push(scalar(items, "value").map(str::to_string));
    }

    let mut edges = Vec::new();
    for (key, value, line) in body {
        if key != "edge" {
            continue;
        }
        let Value::List(items) = value else {
            return Err(Error::Parse {
                line: *line,
                msg: "`edge` must be a block".into(),
            });
        };
        let end = |field| -> Result<usize> {
            let id = int_field(items, field, *line)?;
            ids.get(&id).copied().ok_or_else(|| {
                Error::Validation(format!(
                    "edge on line {line} references unknown node id {id}"
                ))
            })
        };
        let s = end("source")?;
        let t = end("target")?;
        edges.push((s, t, 1));
    }

    let graph = ObservedGraph::from_weighted_edges(labels.len(), false, edges)?;
    // Duplicate labels fall back to index naming rather than failing the load.
    let graph = match graph.clone().with_labels(labels) {
        Ok(g) => g,
        Err(_) => graph,
    };
    if groups.iter().any(Option::is_some) {
        graph.with_groups(groups)
    } else {
        Ok(graph)
    }
}
