//! ISCAS-85/89 `.bench` reader and writer.
//!
//! Grammar, one statement per line: `INPUT(sig)`, `OUTPUT(sig)`, and
//! `sig = KIND(a, b, ...)`.  `#` starts a comment.  Signal names are bare
//! tokens (letters, digits, `_`, and a few punctuation characters seen in
//! the wild).  Line order carries no meaning.

use super::ParseError;
use crate::graph::{CircuitGraph, GateKind, GateNode};

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '[' | ']' | '$' | '/')
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_name_char)
}

pub fn parse_bench(text: &str, name: &str) -> Result<CircuitGraph, ParseError> {
    let mut inputs: Vec<String> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    let mut nodes: Vec<GateNode> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }

        if let Some(rest) = line
            .strip_prefix("INPUT")
            .or_else(|| line.strip_prefix("input"))
        {
            inputs.push(parse_paren_arg(rest, lineno)?);
            continue;
        }
        if let Some(rest) = line
            .strip_prefix("OUTPUT")
            .or_else(|| line.strip_prefix("output"))
        {
            outputs.push(parse_paren_arg(rest, lineno)?);
            continue;
        }

        // sig = KIND(args)
        let (lhs, rhs) = line
            .split_once('=')
            .ok_or_else(|| ParseError::syntax(lineno, format!("expected `=` in `{line}`")))?;
        let lhs = lhs.trim();
        if !valid_name(lhs) {
            return Err(ParseError::syntax(lineno, format!("bad signal `{lhs}`")));
        }
        let rhs = rhs.trim();
        let open = rhs
            .find('(')
            .ok_or_else(|| ParseError::syntax(lineno, "expected `(` after gate kind"))?;
        if !rhs.ends_with(')') {
            return Err(ParseError::syntax(lineno, "expected closing `)`"));
        }
        let kind_str = rhs[..open].trim().to_ascii_uppercase();
        let kind = GateKind::from_str_upper(&kind_str).ok_or_else(|| {
            ParseError::unsupported(lineno, format!("unknown gate kind `{kind_str}`"))
        })?;
        if kind == GateKind::Lut {
            return Err(ParseError::unsupported(
                lineno,
                "LUT has no `.bench` spelling",
            ));
        }
        let args: Vec<String> = rhs[open + 1..rhs.len() - 1]
            .split(',')
            .map(|a| a.trim().to_string())
            .collect();
        if args.iter().any(|a| !valid_name(a)) {
            return Err(ParseError::syntax(lineno, format!("bad argument in `{rhs}`")));
        }
        nodes.push(GateNode::new(lhs, kind, args));
    }

    Ok(CircuitGraph::new(name, inputs, outputs, nodes)?)
}

fn parse_paren_arg(rest: &str, lineno: usize) -> Result<String, ParseError> {
    let rest = rest.trim();
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| ParseError::syntax(lineno, "expected `(name)`"))?
        .trim();
    if !valid_name(inner) {
        return Err(ParseError::syntax(lineno, format!("bad signal `{inner}`")));
    }
    Ok(inner.to_string())
}

/// Writes a graph back out as `.bench` text.  Node lines are emitted in
/// name order, so equal graphs serialize identically.
pub fn emit_bench(graph: &CircuitGraph) -> Result<String, ParseError> {
    let mut out = String::new();
    out.push_str(&format!("# {}\n", graph.name));
    for pi in &graph.primary_inputs {
        out.push_str(&format!("INPUT({pi})\n"));
    }
    for po in &graph.primary_outputs {
        out.push_str(&format!("OUTPUT({po})\n"));
    }
    let mut nodes: Vec<&GateNode> = graph.nodes.iter().collect();
    nodes.sort_by(|a, b| a.name.cmp(&b.name));
    for n in nodes {
        if n.kind == GateKind::Lut {
            return Err(ParseError::LutNotRepresentable(n.name.clone()));
        }
        out.push_str(&format!(
            "{} = {}({})\n",
            n.name,
            n.kind.as_str(),
            n.inputs.join(", ")
        ));
    }
    Ok(out)
}

/// True when two graphs describe the same circuit up to statement order.
pub fn isomorphic(a: &CircuitGraph, b: &CircuitGraph) -> bool {
    use std::collections::BTreeMap;
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    if sorted(&a.primary_inputs) != sorted(&b.primary_inputs)
        || sorted(&a.primary_outputs) != sorted(&b.primary_outputs)
    {
        return false;
    }
    let canon = |g: &CircuitGraph| -> BTreeMap<String, (GateKind, Vec<String>)> {
        g.nodes
            .iter()
            .map(|n| (n.name.clone(), (n.kind, n.inputs.clone())))
            .collect()
    };
    canon(a) == canon(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const S27: &str = include_str!("../../assets/benchmarks/s27.bench");

    #[test]
    fn minimal_inverter() {
        let g = parse_bench("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\n", "inv").unwrap();
        assert_eq!(g.primary_inputs, vec!["a"]);
        assert_eq!(g.primary_outputs, vec!["y"]);
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].kind, GateKind::Not);
    }

    #[test]
    fn s27_counts_match_an_independent_line_scan() {
        // Oracle: count statements straight off the text, independently of
        // the parser's data structures.
        let inputs = S27.lines().filter(|l| l.trim().starts_with("INPUT")).count();
        let outputs = S27
            .lines()
            .filter(|l| l.trim().starts_with("OUTPUT"))
            .count();
        let dffs = S27.lines().filter(|l| l.contains("DFF")).count();
        let gates = S27
            .lines()
            .filter(|l| l.contains('=') && !l.contains("DFF"))
            .count();
        assert_eq!((inputs, outputs, dffs, gates), (4, 1, 3, 10));

        let g = parse_bench(S27, "s27").unwrap();
        assert_eq!(g.primary_inputs.len(), inputs);
        assert_eq!(g.primary_outputs.len(), outputs);
        assert_eq!(g.sequential_nodes().len(), dffs);
        assert_eq!(g.combinational_nodes().len(), gates);
    }

    #[test]
    fn statement_order_is_irrelevant() {
        let forward = parse_bench(S27, "s27").unwrap();
        let mut lines: Vec<&str> = S27.lines().collect();
        lines.reverse();
        let reversed = parse_bench(&lines.join("\n"), "s27").unwrap();
        assert!(isomorphic(&forward, &reversed));
    }

    #[test]
    fn s27_round_trips() {
        let g = parse_bench(S27, "s27").unwrap();
        let text = emit_bench(&g).unwrap();
        let g2 = parse_bench(&text, "s27").unwrap();
        assert!(isomorphic(&g, &g2));
    }

    #[test]
    fn unknown_gate_kind_is_unsupported() {
        let e = parse_bench("INPUT(a)\nOUTPUT(y)\ny = MAJ3(a, a, a)\n", "x").unwrap_err();
        assert!(matches!(e, ParseError::Unsupported { line: 3, .. }));
    }

    #[test]
    fn arity_limit_is_reported() {
        let mut text = String::new();
        let names: Vec<String> = (0..65).map(|i| format!("i{i}")).collect();
        for n in &names {
            text.push_str(&format!("INPUT({n})\n"));
        }
        text.push_str("OUTPUT(y)\n");
        text.push_str(&format!("y = AND({})\n", names.join(", ")));
        let e = parse_bench(&text, "wide").unwrap_err();
        assert!(matches!(
            e,
            ParseError::Graph(crate::graph::GraphError::ArityLimit { .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let g = parse_bench(
            "# header\n\nINPUT(a) # trailing\nOUTPUT(y)\ny = BUF(a)\n",
            "c",
        )
        .unwrap();
        assert_eq!(g.nodes.len(), 1);
    }

    #[test]
    fn pass_through_graph_emits_valid_text() {
        let g = CircuitGraph::new("thru", vec!["a".into()], vec!["y".into()], vec![
            GateNode::new("y", GateKind::Buf, vec!["a".into()]),
        ])
        .unwrap();
        let text = emit_bench(&g).unwrap();
        let g2 = parse_bench(&text, "thru").unwrap();
        assert!(isomorphic(&g, &g2));
    }

    #[test]
    fn lut_cannot_be_emitted() {
        let g = CircuitGraph::new("t", vec!["a".into()], vec!["y".into()], vec![
            GateNode::new("y", GateKind::Lut, vec!["a".into()]),
        ])
        .unwrap();
        assert!(matches!(
            emit_bench(&g),
            Err(ParseError::LutNotRepresentable(_))
        ));
    }
}
