//! Human-readable dumps: an indented text tree and a Graphviz DOT graph.

use alloc::string::String;
use core::fmt::Write;

use super::{Elem, TemplatedRadixTree, TrtIndex};

const PREVIEW: usize = 6;

fn preview(segment: &[Elem]) -> String {
    let mut s = String::new();
    for (i, e) in segment.iter().take(PREVIEW).enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{e}");
    }
    if segment.len() > PREVIEW {
        let _ = write!(s, " ... (+{})", segment.len() - PREVIEW);
    }
    s
}

fn label(tree: &TemplatedRadixTree, idx: TrtIndex) -> String {
    let node = tree.node(idx);
    let mut s = String::new();
    match &node.leaf {
        Some(info) => {
            let _ = write!(s, "#{idx} leaf op={} worker={}", info.op, info.worker);
            if let Some(q) = info.query {
                let _ = write!(s, " query={q}");
            }
        }
        None if idx == TemplatedRadixTree::ROOT => {
            let _ = write!(s, "#{idx} root");
        }
        None => {
            let _ = write!(s, "#{idx} w={} [{}]", node.weight, preview(&node.segment));
        }
    }
    s
}

impl TemplatedRadixTree {
    /// One line per node, indented by depth, children in insertion order,
    /// followed by the dependency edges.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let mut stack = alloc::vec![TemplatedRadixTree::ROOT];
        while let Some(idx) = stack.pop() {
            let depth = self.node(idx).depth;
            let _ = writeln!(out, "{:indent$}{}", "", label(self, idx), indent = depth * 2);
            stack.extend(self.node(idx).children.iter().rev().copied());
        }
        for (from, to) in self.dep_edges() {
            let _ = writeln!(out, "dep #{from} -> #{to}");
        }
        out
    }

    pub fn dump_dot(&self) -> String {
        let mut out = String::from("digraph trt {\n  node [shape=box, fontname=monospace];\n");
        for idx in 0..self.nodes().len() {
            let text = label(self, idx).replace('"', "'");
            let _ = writeln!(out, "  n{idx} [label=\"{text}\"];");
            for c in &self.node(idx).children {
                let _ = writeln!(out, "  n{idx} -> n{c};");
            }
        }
        for (from, to) in self.dep_edges() {
            let _ = writeln!(out, "  n{from} -> n{to} [style=dashed, color=red, constraint=false];");
        }
        out.push_str("}\n");
        out
    }
}
