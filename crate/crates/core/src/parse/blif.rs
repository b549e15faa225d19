//! Structural BLIF subset.
//!
//! Supported directives: `.model`, `.inputs`, `.outputs`, `.names`,
//! `.latch`, `.end`.  `.names` blocks become LUT nodes (the truth table is
//! checked for shape, then discarded: downstream stages care about arity,
//! power and delay, not logic).  `.latch` becomes a DFF; its type, control
//! and initial value are ignored.  Anything else (`.subckt`, `.gate`,
//! `.clock`, ...) is rejected rather than misread.

use super::ParseError;
use crate::graph::{CircuitGraph, GateKind, GateNode};

/// One logical line: continuation backslashes folded in, comments stripped.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Iterator for Lines<'a> {
    type Item = (usize, String);

    fn next(&mut self) -> Option<(usize, String)> {
        loop {
            let (i, raw) = self.inner.next()?;
            let mut line = strip_comment(raw).trim_end().to_string();
            let start = i + 1;
            while line.ends_with('\\') {
                line.pop();
                match self.inner.next() {
                    Some((_, cont)) => line.push_str(strip_comment(cont).trim_end()),
                    None => break,
                }
            }
            if !line.trim().is_empty() {
                return Some((start, line.trim().to_string()));
            }
        }
    }
}

fn strip_comment(s: &str) -> &str {
    match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    }
}

pub fn parse_blif(text: &str) -> Result<CircuitGraph, ParseError> {
    let mut name = String::from("blif");
    let mut inputs: Vec<String> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    let mut nodes: Vec<GateNode> = Vec::new();
    // (lineno, output, fan-in) of the `.names` block whose table rows we
    // are currently consuming.
    let mut open_table: Option<(usize, usize)> = None;

    let lines = Lines {
        inner: text.lines().enumerate(),
    };
    for (lineno, line) in lines {
        if let Some(directive) = line.strip_prefix('.') {
            open_table = None;
            let mut parts = directive.split_whitespace();
            let keyword = parts.next().unwrap_or("");
            let args: Vec<&str> = parts.collect();
            match keyword {
                "model" => {
                    if let Some(n) = args.first() {
                        name = (*n).to_string();
                    }
                }
                "inputs" => inputs.extend(args.iter().map(|s| s.to_string())),
                "outputs" => outputs.extend(args.iter().map(|s| s.to_string())),
                "names" => {
                    if args.is_empty() {
                        return Err(ParseError::syntax(lineno, "`.names` without signals"));
                    }
                    if args.len() == 1 {
                        return Err(ParseError::unsupported(
                            lineno,
                            "constant `.names` (zero fan-in) is not supported",
                        ));
                    }
                    let output = args[args.len() - 1].to_string();
                    let ins: Vec<String> =
                        args[..args.len() - 1].iter().map(|s| s.to_string()).collect();
                    open_table = Some((lineno, ins.len()));
                    nodes.push(GateNode::new(output, GateKind::Lut, ins));
                }
                "latch" => {
                    // .latch <input> <output> [<type> <control>] [<init>]
                    if args.len() < 2 {
                        return Err(ParseError::syntax(
                            lineno,
                            "`.latch` needs an input and an output",
                        ));
                    }
                    nodes.push(GateNode::new(
                        args[1],
                        GateKind::Dff,
                        vec![args[0].to_string()],
                    ));
                }
                "end" => break,
                other => {
                    return Err(ParseError::unsupported(
                        lineno,
                        format!("directive `.{other}`"),
                    ));
                }
            }
        } else {
            // Truth table row for the open `.names` block.
            let (_, fan_in) = open_table.ok_or_else(|| {
                ParseError::syntax(lineno, format!("stray table row `{line}`"))
            })?;
            let mut cols = line.split_whitespace();
            let pattern = cols.next().unwrap_or("");
            let value = cols.next();
            if cols.next().is_some()
                || pattern.len() != fan_in
                || !pattern.chars().all(|c| matches!(c, '0' | '1' | '-'))
                || !matches!(value, Some("0") | Some("1"))
            {
                return Err(ParseError::syntax(
                    lineno,
                    format!("malformed truth table row `{line}` (fan-in {fan_in})"),
                ));
            }
        }
    }

    Ok(CircuitGraph::new(name, inputs, outputs, nodes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverter_becomes_a_one_input_lut() {
        let g = parse_blif(
            ".model inv\n.inputs a\n.outputs y\n.names a y\n0 1\n.end\n",
        )
        .unwrap();
        assert_eq!(g.name, "inv");
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].kind, GateKind::Lut);
        assert_eq!(g.nodes[0].inputs, vec!["a"]);
    }

    #[test]
    fn latch_becomes_a_dff() {
        let g = parse_blif(
            ".model seq\n.inputs d\n.outputs q\n.latch d q re clk 0\n.end\n",
        )
        .unwrap();
        assert_eq!(g.nodes[0].kind, GateKind::Dff);
        assert_eq!(g.nodes[0].name, "q");
        assert_eq!(g.nodes[0].inputs, vec!["d"]);
    }

    #[test]
    fn subckt_is_rejected_not_misread() {
        let e = parse_blif(".model top\n.inputs a\n.outputs y\n.subckt foo a=a y=y\n.end\n")
            .unwrap_err();
        assert!(matches!(e, ParseError::Unsupported { line: 4, .. }));
    }

    #[test]
    fn malformed_truth_table_is_rejected() {
        let e = parse_blif(
            ".model bad\n.inputs a b\n.outputs y\n.names a b y\n1 1\n.end\n",
        )
        .unwrap_err();
        assert!(matches!(e, ParseError::Syntax { line: 5, .. }));
    }

    #[test]
    fn continuation_lines_fold() {
        let g = parse_blif(
            ".model c\n.inputs a \\\nb\n.outputs y\n.names a b y\n11 1\n.end\n",
        )
        .unwrap();
        assert_eq!(g.primary_inputs, vec!["a", "b"]);
    }

    #[test]
    fn two_level_netlist_levelizes() {
        let mut g = parse_blif(
            ".model two\n.inputs a b\n.outputs y\n.names a b m\n11 1\n.names m a y\n11 1\n.end\n",
        )
        .unwrap();
        g.levelize().unwrap();
        assert_eq!(g.level_of("y"), Some(2));
    }
}
