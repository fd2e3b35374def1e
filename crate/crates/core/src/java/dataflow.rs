//! Flow-insensitive, intraprocedural def-use extraction.
//!
//! One pass over the tree in source order:
//! * `x = e`, `T x = e`, `for (T x : e)`: every variable read in `e` yields
//!   `x computed_from y`; compound assignment and `x++` add `x computed_from x`.
//! * any other read of `y` after a textual definition of `y` (declaration,
//!   parameter, assignment) yields `y comes_from y`.
//!
//! Field accesses (`a.b`), method names and type names are not variables.
//! An identifier starting with an upper-case letter and used as the target of
//! `.` is taken to be a class name. Symbols are renamed `v0, v1, …` in order
//! of first appearance in the token stream.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::ast::AstNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ComesFrom,
    ComputedFrom,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlowEdge {
    pub use_var: String,
    pub def_var: String,
    pub relation: Relation,
}

// Nodes whose direct identifier children name things rather than read variables.
const NAMING_NODES: &[&str] = &[
    "method_declaration", "constructor_declaration", "class_declaration",
    "interface_declaration", "enum_declaration", "enum_constant", "labeled_statement",
    "break_statement", "continue_statement", "type", "type_arguments", "type_parameters",
    "type_parameter", "wildcard", "annotation", "package_declaration", "import_declaration",
    "throws_clause", "switch_label", "class_literal", "modifiers", "element_value_array",
];

#[derive(Default)]
struct Walker {
    defined: HashSet<String>,
    variables: HashSet<String>,
    edges: Vec<(String, String, Relation)>,
}

impl Walker {
    fn define(&mut self, name: &str) {
        self.defined.insert(name.to_string());
        self.variables.insert(name.to_string());
    }

    fn read(&mut self, name: &str, target: Option<&str>) {
        match target {
            Some(t) => {
                self.variables.insert(name.to_string());
                self.edges.push((t.to_string(), name.to_string(), Relation::ComputedFrom));
            }
            None if self.defined.contains(name) => {
                self.edges.push((name.to_string(), name.to_string(), Relation::ComesFrom));
            }
            None => {}
        }
    }

    fn visit(&mut self, n: &AstNode, target: Option<&str>) {
        if n.is_leaf() {
            if n.is_identifier() {
                self.read(&n.leaf_text, target);
            }
            return;
        }
        let ch = &n.children;
        match n.kind.as_str() {
            "variable_declarator" => {
                let name = &ch[0].leaf_text;
                if let Some(init) = ch.iter().position(|c| c.is_leaf() && c.leaf_text == "=") {
                    for c in &ch[init + 1..] {
                        self.visit(c, Some(name));
                    }
                }
                self.define(name);
            }
            "formal_parameter" | "catch_clause" => {
                for c in ch {
                    if c.is_identifier() {
                        self.define(&c.leaf_text);
                    } else if c.kind == "block" {
                        self.visit(c, None);
                    }
                }
            }
            "enhanced_for_statement" => {
                let colon = ch.iter().position(|c| c.is_leaf() && c.leaf_text == ":").unwrap_or(0);
                let var = ch[..colon].iter().rev().find(|c| c.is_identifier()).map(|c| c.leaf_text.clone());
                if let Some(v) = &var {
                    // iterable sits right after the colon
                    self.visit(&ch[colon + 1], Some(v));
                    self.define(v);
                }
                for c in &ch[colon + 2..] {
                    self.visit(c, target);
                }
            }
            "assignment" => {
                let (lhs, op, rhs) = (&ch[0], &ch[1].leaf_text, &ch[2]);
                match assigned_variable(lhs) {
                    Some(var) => {
                        if let Some(idx) = lhs.children.get(2) {
                            // `a[i] = e`: the index is an ordinary read
                            self.visit(idx, None);
                        }
                        self.visit(rhs, Some(&var));
                        if op != "=" {
                            self.read(&var, Some(&var));
                        }
                        self.define(&var);
                        if let Some(t) = target {
                            self.read(&var, Some(t));
                        }
                    }
                    None => {
                        self.visit(lhs, None);
                        self.visit(rhs, target);
                    }
                }
            }
            "postfix_expression" | "unary_expression"
                if ch.iter().any(|c| c.is_leaf() && (c.leaf_text == "++" || c.leaf_text == "--")) =>
            {
                let operand = if n.kind == "postfix_expression" { &ch[0] } else { &ch[1] };
                match assigned_variable(operand) {
                    Some(var) => {
                        self.read(&var, Some(&var));
                        self.define(&var);
                        if let Some(t) = target {
                            self.read(&var, Some(t));
                        }
                    }
                    None => self.visit(operand, target),
                }
            }
            "method_invocation" => {
                if ch.len() == 4 {
                    self.visit_qualifier(&ch[0], target);
                }
                if let Some(args) = ch.last() {
                    self.visit(args, target);
                }
            }
            "field_access" => self.visit_qualifier(&ch[0], target),
            "object_creation" => {
                // class bodies of anonymous classes are a separate scope
                for c in ch.iter().filter(|c| c.kind == "arguments") {
                    self.visit(c, target);
                }
            }
            "array_creation" | "cast_expression" | "instanceof_expression" => {
                for c in ch.iter().filter(|c| c.kind != "type") {
                    self.visit(c, target);
                }
            }
            kind if NAMING_NODES.contains(&kind) => {
                for c in ch.iter().filter(|c| !c.is_leaf()) {
                    self.visit(c, target);
                }
            }
            _ => {
                for c in ch {
                    self.visit(c, target);
                }
            }
        }
    }

    fn visit_qualifier(&mut self, q: &AstNode, target: Option<&str>) {
        if q.is_identifier() && q.leaf_text.starts_with(|c: char| c.is_uppercase()) {
            return;
        }
        self.visit(q, target);
    }
}

/// The plain variable written by an assignment target, if any.
fn assigned_variable(lhs: &AstNode) -> Option<String> {
    if lhs.is_identifier() {
        return Some(lhs.leaf_text.clone());
    }
    match lhs.kind.as_str() {
        "array_access" => assigned_variable(&lhs.children[0]),
        "parenthesized_expression" => assigned_variable(&lhs.children[1]),
        _ => None,
    }
}

/// Def-use edges of `ast`, alpha-renamed and sorted.
pub fn extract_dataflow(ast: &AstNode) -> Vec<FlowEdge> {
    let mut w = Walker::default();
    w.visit(ast, None);

    let mut rename: HashMap<&str, String> = HashMap::new();
    for leaf in ast.leaves() {
        if leaf.is_identifier() && w.variables.contains(&leaf.leaf_text) && !rename.contains_key(leaf.leaf_text.as_str()) {
            let id = format!("v{}", rename.len());
            rename.insert(&leaf.leaf_text, id);
        }
    }
    let mut edges: Vec<FlowEdge> = w
        .edges
        .iter()
        .map(|(u, d, r)| FlowEdge {
            use_var: rename[u.as_str()].clone(),
            def_var: rename[d.as_str()].clone(),
            relation: *r,
        })
        .collect();
    edges.sort();
    edges
}
