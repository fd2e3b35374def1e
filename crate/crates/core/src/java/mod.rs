//! Java front-end: lexer, member-level parser, subtree signatures and
//! def-use edges. This is what the code metrics see.

mod ast;
mod dataflow;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{enumerate_subtrees, multiset_size, AstNode, SubtreeMultiset};
pub use dataflow::{extract_dataflow, FlowEdge, Relation};
pub use lexer::{is_keyword, lex, Token, TokenKind, KEYWORDS};
pub use parser::parse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JavaError {
    #[error("lex error at byte {offset}")]
    Lex { offset: usize },
    #[error("syntax error at byte {offset}, expected one of {expected:?}")]
    Syntax { offset: usize, expected: Vec<String> },
}
