use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::lexer::{Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AstNode {
    /// Grammar production for internal nodes, token kind name for leaves.
    pub kind: String,
    pub children: Vec<AstNode>,
    /// Lexeme for leaves, empty for internal nodes.
    pub leaf_text: String,
    /// Set on the grouping node introduced when the input had to be wrapped.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
    #[serde(skip)]
    is_leaf: bool,
}

impl AstNode {
    pub fn internal(kind: &str, children: Vec<AstNode>) -> Self {
        AstNode {
            kind: kind.to_string(),
            children,
            leaf_text: String::new(),
            synthetic: false,
            is_leaf: false,
        }
    }

    pub fn leaf(token: &Token) -> Self {
        AstNode {
            kind: token.kind.name().to_string(),
            children: Vec::new(),
            leaf_text: token.text.clone(),
            synthetic: false,
            is_leaf: true,
        }
    }

    pub(crate) fn synthetic_group(kind: &str, children: Vec<AstNode>) -> Self {
        let mut n = AstNode::internal(kind, children);
        n.synthetic = true;
        n
    }

    pub fn is_leaf(&self) -> bool {
        self.is_leaf
    }

    pub fn is_identifier(&self) -> bool {
        self.is_leaf && self.kind == TokenKind::Identifier.name()
    }

    /// Leaves in source order.
    pub fn leaves(&self) -> Vec<&AstNode> {
        let mut out = Vec::new();
        fn go<'a>(n: &'a AstNode, out: &mut Vec<&'a AstNode>) {
            if n.is_leaf {
                out.push(n);
            } else {
                n.children.iter().for_each(|c| go(c, out));
            }
        }
        go(self, &mut out);
        out
    }

    pub fn internal_count(&self) -> usize {
        if self.is_leaf {
            0
        } else {
            1 + self.children.iter().map(AstNode::internal_count).sum::<usize>()
        }
    }

    /// Canonical parenthesized pre-order serialization of this subtree.
    pub fn signature(&self) -> String {
        let mut s = String::new();
        self.write_signature(&mut s);
        s
    }

    fn write_signature(&self, out: &mut String) {
        if self.is_leaf {
            let _ = write!(out, "{:?}", self.leaf_text);
            return;
        }
        out.push('(');
        out.push_str(&self.kind);
        for c in &self.children {
            out.push(' ');
            c.write_signature(out);
        }
        out.push(')');
    }

    /// Indented s-expression dump used by the debug CLI.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        fn go(n: &AstNode, depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            if n.is_leaf {
                let _ = writeln!(out, "{pad}{} {:?}", n.kind, n.leaf_text);
            } else {
                let mark = if n.synthetic { " (synthetic)" } else { "" };
                let _ = writeln!(out, "{pad}{}{mark}", n.kind);
                n.children.iter().for_each(|c| go(c, depth + 1, out));
            }
        }
        go(self, 0, &mut s);
        s
    }
}

/// Multiset of subtree signatures, keyed by signature.
pub type SubtreeMultiset = BTreeMap<String, usize>;

/// One signature per non-synthetic internal node.
pub fn enumerate_subtrees(ast: &AstNode) -> SubtreeMultiset {
    let mut out = SubtreeMultiset::new();
    fn go(n: &AstNode, out: &mut SubtreeMultiset) {
        if n.is_leaf {
            return;
        }
        if !n.synthetic {
            *out.entry(n.signature()).or_insert(0) += 1;
        }
        n.children.iter().for_each(|c| go(c, out));
    }
    go(ast, &mut out);
    out
}

pub fn multiset_size(m: &SubtreeMultiset) -> usize {
    m.values().sum()
}
