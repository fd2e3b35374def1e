//! Recursive-descent parser for the Java subset used by the metrics.
//!
//! Covers class/interface/enum declarations, fields, methods and
//! constructors, the usual statements (blocks, locals, if/for/while/do,
//! return, try, switch, throw, break/continue, labels, assert,
//! synchronized) and a precedence-climbing expression grammar. Lambdas,
//! method references, switch expressions and qualified inner creation are
//! rejected with a syntax error.
//!
//! `<` inside an expression is always a relational operator; a statement
//! is read as a local declaration only if a type followed by an identifier
//! can be parsed from its start (bounded backtracking), so `List<String> x`
//! declares while `a < b` compares.

use std::collections::BTreeSet;

use super::ast::AstNode;
use super::lexer::{lex, Token, TokenKind};
use super::JavaError;

struct Fail;

type PResult = Result<AstNode, Fail>;

const PRIMITIVES: &[&str] = &["boolean", "byte", "char", "short", "int", "long", "float", "double"];

const MEMBER_MODIFIERS: &[&str] = &[
    "public", "protected", "private", "static", "abstract", "final", "native", "synchronized",
    "transient", "volatile", "strictfp", "default",
];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="];

fn binary_precedence(tok: &Token) -> Option<u8> {
    if tok.kind == TokenKind::Keyword {
        return (tok.text == "instanceof").then_some(7);
    }
    if tok.kind != TokenKind::Operator {
        return None;
    }
    Some(match tok.text.as_str() {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" | ">>>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

struct Parser<'t> {
    toks: &'t [Token],
    src_len: usize,
    pos: usize,
    /// `>` characters still owed by a `>>`/`>>>` token consumed by an inner type.
    pending_gt: usize,
    furthest: usize,
    expected: BTreeSet<String>,
}

type Mark = (usize, usize);

impl<'t> Parser<'t> {
    fn new(toks: &'t [Token], src_len: usize) -> Self {
        Parser {
            toks,
            src_len,
            pos: 0,
            pending_gt: 0,
            furthest: 0,
            expected: BTreeSet::new(),
        }
    }

    fn mark(&self) -> Mark {
        (self.pos, self.pending_gt)
    }

    fn reset(&mut self, m: Mark) {
        self.pos = m.0;
        self.pending_gt = m.1;
    }

    fn eof(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self, n: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + n)
    }

    fn at(&self, text: &str) -> bool {
        self.peek_is(0, text)
    }

    fn peek_is(&self, n: usize, text: &str) -> bool {
        self.peek(n).is_some_and(|t| t.kind != TokenKind::Literal && t.text == text)
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek(0).is_some_and(|t| t.kind == kind)
    }

    fn at_primitive(&self) -> bool {
        self.peek(0)
            .is_some_and(|t| t.kind == TokenKind::Keyword && PRIMITIVES.contains(&t.text.as_str()))
    }

    fn fail(&mut self, expected: &str) -> Fail {
        if self.pos > self.furthest {
            self.furthest = self.pos;
            self.expected.clear();
        }
        if self.pos == self.furthest {
            self.expected.insert(expected.to_string());
        }
        Fail
    }

    fn error_offset(&self) -> usize {
        self.toks.get(self.furthest).map_or(self.src_len, |t| t.span.0)
    }

    fn bump(&mut self) -> AstNode {
        let leaf = AstNode::leaf(&self.toks[self.pos]);
        self.pos += 1;
        leaf
    }

    fn expect(&mut self, text: &str) -> PResult {
        if self.at(text) {
            Ok(self.bump())
        } else {
            Err(self.fail(text))
        }
    }

    fn eat(&mut self, text: &str) -> Option<AstNode> {
        self.at(text).then(|| self.bump())
    }

    fn ident(&mut self) -> PResult {
        if self.at_kind(TokenKind::Identifier) {
            Ok(self.bump())
        } else {
            Err(self.fail("identifier"))
        }
    }

    // ---- declarations ----

    fn compilation_unit(&mut self) -> PResult {
        let mut ch = Vec::new();
        if self.at("package") {
            let mut p = vec![self.bump()];
            self.qualified_name(&mut p)?;
            p.push(self.expect(";")?);
            ch.push(AstNode::internal("package_declaration", p));
        }
        while self.at("import") {
            let mut p = vec![self.bump()];
            if let Some(s) = self.eat("static") {
                p.push(s);
            }
            p.push(self.ident()?);
            while let Some(dot) = self.eat(".") {
                p.push(dot);
                if self.at("*") {
                    p.push(self.bump());
                    break;
                }
                p.push(self.ident()?);
            }
            p.push(self.expect(";")?);
            ch.push(AstNode::internal("import_declaration", p));
        }
        while !self.eof() {
            if let Some(semi) = self.eat(";") {
                ch.push(semi);
                continue;
            }
            let mods = self.modifiers(true)?;
            ch.push(self.type_declaration(mods)?);
        }
        if ch.is_empty() {
            return Err(self.fail("declaration"));
        }
        Ok(AstNode::internal("compilation_unit", ch))
    }

    fn qualified_name(&mut self, out: &mut Vec<AstNode>) -> Result<(), Fail> {
        out.push(self.ident()?);
        while self.at(".") && self.peek(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
            out.push(self.bump());
            out.push(self.bump());
        }
        Ok(())
    }

    fn type_declaration(&mut self, mods: Option<AstNode>) -> PResult {
        if self.at("class") {
            self.class_declaration(mods)
        } else if self.at("interface") {
            self.interface_declaration(mods)
        } else if self.at("enum") {
            self.enum_declaration(mods)
        } else {
            Err(self.fail("class"))
        }
    }

    fn modifiers(&mut self, member: bool) -> Result<Option<AstNode>, Fail> {
        let mut ch = Vec::new();
        loop {
            if self.at("@") && !self.peek_is(1, "interface") {
                ch.push(self.annotation()?);
                continue;
            }
            let is_mod = self.peek(0).is_some_and(|t| {
                t.kind == TokenKind::Keyword
                    && if member {
                        MEMBER_MODIFIERS.contains(&t.text.as_str())
                    } else {
                        t.text == "final"
                    }
            });
            if !is_mod {
                break;
            }
            ch.push(self.bump());
        }
        Ok((!ch.is_empty()).then(|| AstNode::internal("modifiers", ch)))
    }

    fn annotation(&mut self) -> PResult {
        let mut ch = vec![self.expect("@")?];
        self.qualified_name(&mut ch)?;
        if let Some(open) = self.eat("(") {
            ch.push(open);
            while !self.at(")") {
                if self.at_kind(TokenKind::Identifier) && self.peek_is(1, "=") {
                    ch.push(self.bump());
                    ch.push(self.bump());
                }
                ch.push(self.element_value()?);
                match self.eat(",") {
                    Some(c) => ch.push(c),
                    None => break,
                }
            }
            ch.push(self.expect(")")?);
        }
        Ok(AstNode::internal("annotation", ch))
    }

    fn element_value(&mut self) -> PResult {
        if self.at("@") {
            return self.annotation();
        }
        if let Some(open) = self.eat("{") {
            let mut ch = vec![open];
            while !self.at("}") {
                ch.push(self.element_value()?);
                match self.eat(",") {
                    Some(c) => ch.push(c),
                    None => break,
                }
            }
            ch.push(self.expect("}")?);
            return Ok(AstNode::internal("element_value_array", ch));
        }
        self.ternary()
    }

    fn class_declaration(&mut self, mods: Option<AstNode>) -> PResult {
        let mut ch: Vec<AstNode> = mods.into_iter().collect();
        ch.push(self.expect("class")?);
        ch.push(self.ident()?);
        if self.at("<") {
            ch.push(self.type_parameters()?);
        }
        if let Some(ext) = self.eat("extends") {
            ch.push(ext);
            ch.push(self.type_()?);
        }
        if let Some(imp) = self.eat("implements") {
            ch.push(imp);
            self.type_list(&mut ch)?;
        }
        ch.push(self.class_body()?);
        Ok(AstNode::internal("class_declaration", ch))
    }

    fn interface_declaration(&mut self, mods: Option<AstNode>) -> PResult {
        let mut ch: Vec<AstNode> = mods.into_iter().collect();
        ch.push(self.expect("interface")?);
        ch.push(self.ident()?);
        if self.at("<") {
            ch.push(self.type_parameters()?);
        }
        if let Some(ext) = self.eat("extends") {
            ch.push(ext);
            self.type_list(&mut ch)?;
        }
        ch.push(self.class_body()?);
        Ok(AstNode::internal("interface_declaration", ch))
    }

    fn enum_declaration(&mut self, mods: Option<AstNode>) -> PResult {
        let mut ch: Vec<AstNode> = mods.into_iter().collect();
        ch.push(self.expect("enum")?);
        ch.push(self.ident()?);
        if let Some(imp) = self.eat("implements") {
            ch.push(imp);
            self.type_list(&mut ch)?;
        }
        let mut body = vec![self.expect("{")?];
        while self.at_kind(TokenKind::Identifier) || self.at("@") {
            let mut c = Vec::new();
            while self.at("@") {
                c.push(self.annotation()?);
            }
            c.push(self.ident()?);
            if self.at("(") {
                c.push(self.arguments()?);
            }
            if self.at("{") {
                c.push(self.class_body()?);
            }
            body.push(AstNode::internal("enum_constant", c));
            match self.eat(",") {
                Some(comma) => body.push(comma),
                None => break,
            }
        }
        if let Some(semi) = self.eat(";") {
            body.push(semi);
            while !self.at("}") && !self.eof() {
                body.push(self.member()?);
            }
        }
        body.push(self.expect("}")?);
        ch.push(AstNode::internal("enum_body", body));
        Ok(AstNode::internal("enum_declaration", ch))
    }

    fn type_list(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        ch.push(self.type_()?);
        while let Some(c) = self.eat(",") {
            ch.push(c);
            ch.push(self.type_()?);
        }
        Ok(())
    }

    fn class_body(&mut self) -> PResult {
        let mut ch = vec![self.expect("{")?];
        while !self.at("}") {
            if self.eof() {
                return Err(self.fail("}"));
            }
            ch.push(self.member()?);
        }
        ch.push(self.bump());
        Ok(AstNode::internal("class_body", ch))
    }

    fn member(&mut self) -> PResult {
        if self.at(";") {
            return Ok(self.bump());
        }
        let mods = self.modifiers(true)?;
        if self.at("{") {
            let mut ch: Vec<AstNode> = mods.into_iter().collect();
            ch.push(self.block()?);
            return Ok(AstNode::internal("initializer", ch));
        }
        if self.at("class") || self.at("interface") || self.at("enum") {
            return self.type_declaration(mods);
        }
        let mut ch: Vec<AstNode> = mods.into_iter().collect();
        if self.at("<") {
            ch.push(self.type_parameters()?);
        }
        if self.at_kind(TokenKind::Identifier) && self.peek_is(1, "(") {
            ch.push(self.bump());
            ch.push(self.formal_parameters()?);
            self.throws_clause(&mut ch)?;
            ch.push(self.block()?);
            return Ok(AstNode::internal("constructor_declaration", ch));
        }
        if self.at("void") {
            ch.push(self.bump());
            ch.push(self.ident()?);
            return self.method_rest(ch);
        }
        ch.push(self.type_()?);
        if self.at_kind(TokenKind::Identifier) && self.peek_is(1, "(") {
            ch.push(self.bump());
            return self.method_rest(ch);
        }
        self.variable_declarators(&mut ch)?;
        ch.push(self.expect(";")?);
        Ok(AstNode::internal("field_declaration", ch))
    }

    fn method_rest(&mut self, mut ch: Vec<AstNode>) -> PResult {
        ch.push(self.formal_parameters()?);
        self.dims(&mut ch);
        self.throws_clause(&mut ch)?;
        if self.at(";") {
            ch.push(self.bump());
        } else {
            ch.push(self.block()?);
        }
        Ok(AstNode::internal("method_declaration", ch))
    }

    fn throws_clause(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        if let Some(t) = self.eat("throws") {
            let mut c = vec![t];
            self.type_list(&mut c)?;
            ch.push(AstNode::internal("throws_clause", c));
        }
        Ok(())
    }

    fn formal_parameters(&mut self) -> PResult {
        let mut ch = vec![self.expect("(")?];
        if !self.at(")") {
            loop {
                let mut p: Vec<AstNode> = self.modifiers(false)?.into_iter().collect();
                p.push(self.type_()?);
                if let Some(dots) = self.eat("...") {
                    p.push(dots);
                }
                p.push(self.ident()?);
                self.dims(&mut p);
                ch.push(AstNode::internal("formal_parameter", p));
                match self.eat(",") {
                    Some(c) => ch.push(c),
                    None => break,
                }
            }
        }
        ch.push(self.expect(")")?);
        Ok(AstNode::internal("formal_parameters", ch))
    }

    fn dims(&mut self, ch: &mut Vec<AstNode>) {
        while self.at("[") && self.peek_is(1, "]") {
            ch.push(self.bump());
            ch.push(self.bump());
        }
    }

    // ---- types ----

    fn type_(&mut self) -> PResult {
        let t = self.type_inner()?;
        if self.pending_gt != 0 {
            return Err(self.fail(">"));
        }
        Ok(t)
    }

    fn type_inner(&mut self) -> PResult {
        let mut ch = Vec::new();
        self.type_name(&mut ch)?;
        self.dims(&mut ch);
        Ok(AstNode::internal("type", ch))
    }

    fn type_name(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        if self.at_primitive() {
            ch.push(self.bump());
            return Ok(());
        }
        ch.push(self.ident()?);
        if self.at("<") {
            ch.push(self.type_arguments()?);
        }
        while self.at(".") && self.peek(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
            ch.push(self.bump());
            ch.push(self.bump());
            if self.at("<") {
                ch.push(self.type_arguments()?);
            }
        }
        Ok(())
    }

    fn type_arguments(&mut self) -> PResult {
        let mut ch = vec![self.expect("<")?];
        if !self.at(">") {
            loop {
                if let Some(q) = self.eat("?") {
                    let mut w = vec![q];
                    if self.at("extends") || self.at("super") {
                        w.push(self.bump());
                        w.push(self.type_inner()?);
                    }
                    ch.push(AstNode::internal("wildcard", w));
                } else {
                    ch.push(self.type_inner()?);
                }
                if self.pending_gt > 0 {
                    break;
                }
                match self.eat(",") {
                    Some(c) => ch.push(c),
                    None => break,
                }
            }
        }
        self.close_angle(&mut ch)?;
        Ok(AstNode::internal("type_arguments", ch))
    }

    fn close_angle(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        if self.pending_gt > 0 {
            self.pending_gt -= 1;
            return Ok(());
        }
        let owed = match self.peek(0).map(|t| t.text.as_str()) {
            Some(">") => 0,
            Some(">>") => 1,
            Some(">>>") => 2,
            _ => return Err(self.fail(">")),
        };
        ch.push(self.bump());
        self.pending_gt = owed;
        Ok(())
    }

    fn type_parameters(&mut self) -> PResult {
        let mut ch = vec![self.expect("<")?];
        loop {
            let mut p = vec![self.ident()?];
            if let Some(ext) = self.eat("extends") {
                p.push(ext);
                p.push(self.type_inner()?);
                while let Some(amp) = self.eat("&") {
                    p.push(amp);
                    p.push(self.type_inner()?);
                }
            }
            ch.push(AstNode::internal("type_parameter", p));
            if self.pending_gt > 0 {
                break;
            }
            match self.eat(",") {
                Some(c) => ch.push(c),
                None => break,
            }
        }
        self.close_angle(&mut ch)?;
        if self.pending_gt != 0 {
            return Err(self.fail(">"));
        }
        Ok(AstNode::internal("type_parameters", ch))
    }

    // ---- variables ----

    fn variable_declarators(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        loop {
            let mut d = vec![self.ident()?];
            self.dims(&mut d);
            if let Some(eq) = self.eat("=") {
                d.push(eq);
                d.push(self.variable_initializer()?);
            }
            ch.push(AstNode::internal("variable_declarator", d));
            match self.eat(",") {
                Some(c) => ch.push(c),
                None => return Ok(()),
            }
        }
    }

    fn variable_initializer(&mut self) -> PResult {
        if self.at("{") {
            self.array_initializer()
        } else {
            self.expression()
        }
    }

    fn array_initializer(&mut self) -> PResult {
        let mut ch = vec![self.expect("{")?];
        while !self.at("}") {
            ch.push(self.variable_initializer()?);
            match self.eat(",") {
                Some(c) => ch.push(c),
                None => break,
            }
        }
        ch.push(self.expect("}")?);
        Ok(AstNode::internal("array_initializer", ch))
    }

    /// Speculatively reads `[final] Type name ...`; restores and returns
    /// `None` when the statement does not start like a declaration.
    fn try_local_var_decl(&mut self, with_semicolon: bool) -> Result<Option<AstNode>, Fail> {
        let m = self.mark();
        let Ok(mods) = self.modifiers(false) else {
            self.reset(m);
            return Ok(None);
        };
        let ty = match self.type_() {
            Ok(t) if self.at_kind(TokenKind::Identifier) => t,
            _ => {
                self.reset(m);
                return Ok(None);
            }
        };
        let mut ch: Vec<AstNode> = mods.into_iter().collect();
        ch.push(ty);
        self.variable_declarators(&mut ch)?;
        if with_semicolon {
            ch.push(self.expect(";")?);
        }
        Ok(Some(AstNode::internal("local_variable_declaration", ch)))
    }

    // ---- statements ----

    fn block(&mut self) -> PResult {
        let mut ch = vec![self.expect("{")?];
        while !self.at("}") {
            if self.eof() {
                return Err(self.fail("}"));
            }
            ch.push(self.block_statement()?);
        }
        ch.push(self.bump());
        Ok(AstNode::internal("block", ch))
    }

    fn block_statement(&mut self) -> PResult {
        if self.at("class") {
            return self.class_declaration(None);
        }
        if let Some(decl) = self.try_local_var_decl(true)? {
            return Ok(decl);
        }
        self.statement()
    }

    fn statement(&mut self) -> PResult {
        let Some(tok) = self.peek(0) else {
            return Err(self.fail("statement"));
        };
        if tok.kind == TokenKind::Identifier && self.peek_is(1, ":") {
            let label = self.bump();
            let colon = self.bump();
            let body = self.statement()?;
            return Ok(AstNode::internal("labeled_statement", vec![label, colon, body]));
        }
        if tok.kind == TokenKind::Literal {
            return self.expression_statement();
        }
        match tok.text.as_str() {
            "{" => self.block(),
            ";" => Ok(AstNode::internal("empty_statement", vec![self.bump()])),
            "if" => {
                let mut ch = vec![self.bump()];
                self.par_expression(&mut ch)?;
                ch.push(self.statement()?);
                if let Some(e) = self.eat("else") {
                    ch.push(e);
                    ch.push(self.statement()?);
                }
                Ok(AstNode::internal("if_statement", ch))
            }
            "while" => {
                let mut ch = vec![self.bump()];
                self.par_expression(&mut ch)?;
                ch.push(self.statement()?);
                Ok(AstNode::internal("while_statement", ch))
            }
            "do" => {
                let mut ch = vec![self.bump()];
                ch.push(self.statement()?);
                ch.push(self.expect("while")?);
                self.par_expression(&mut ch)?;
                ch.push(self.expect(";")?);
                Ok(AstNode::internal("do_statement", ch))
            }
            "for" => self.for_statement(),
            "return" => {
                let mut ch = vec![self.bump()];
                if !self.at(";") {
                    ch.push(self.expression()?);
                }
                ch.push(self.expect(";")?);
                Ok(AstNode::internal("return_statement", ch))
            }
            "break" | "continue" => {
                let kind = if tok.text == "break" { "break_statement" } else { "continue_statement" };
                let mut ch = vec![self.bump()];
                if self.at_kind(TokenKind::Identifier) {
                    ch.push(self.bump());
                }
                ch.push(self.expect(";")?);
                Ok(AstNode::internal(kind, ch))
            }
            "throw" => {
                let mut ch = vec![self.bump()];
                ch.push(self.expression()?);
                ch.push(self.expect(";")?);
                Ok(AstNode::internal("throw_statement", ch))
            }
            "try" => self.try_statement(),
            "switch" => self.switch_statement(),
            "synchronized" => {
                let mut ch = vec![self.bump()];
                self.par_expression(&mut ch)?;
                ch.push(self.block()?);
                Ok(AstNode::internal("synchronized_statement", ch))
            }
            "assert" => {
                let mut ch = vec![self.bump()];
                ch.push(self.expression()?);
                if let Some(c) = self.eat(":") {
                    ch.push(c);
                    ch.push(self.expression()?);
                }
                ch.push(self.expect(";")?);
                Ok(AstNode::internal("assert_statement", ch))
            }
            _ => self.expression_statement(),
        }
    }

    fn expression_statement(&mut self) -> PResult {
        let e = self.expression()?;
        let semi = self.expect(";")?;
        Ok(AstNode::internal("expression_statement", vec![e, semi]))
    }

    fn par_expression(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        ch.push(self.expect("(")?);
        ch.push(self.expression()?);
        ch.push(self.expect(")")?);
        Ok(())
    }

    fn for_statement(&mut self) -> PResult {
        let mut ch = vec![self.expect("for")?];
        ch.push(self.expect("(")?);
        let m = self.mark();
        let enhanced = (|| -> Result<Vec<AstNode>, Fail> {
            let mut h: Vec<AstNode> = self.modifiers(false)?.into_iter().collect();
            h.push(self.type_()?);
            h.push(self.ident()?);
            h.push(self.expect(":")?);
            Ok(h)
        })();
        match enhanced {
            Ok(head) => {
                ch.extend(head);
                ch.push(self.expression()?);
                ch.push(self.expect(")")?);
                ch.push(self.statement()?);
                return Ok(AstNode::internal("enhanced_for_statement", ch));
            }
            Err(_) => self.reset(m),
        }
        if !self.at(";") {
            match self.try_local_var_decl(false)? {
                Some(decl) => ch.push(decl),
                None => self.expression_list(&mut ch)?,
            }
        }
        ch.push(self.expect(";")?);
        if !self.at(";") {
            ch.push(self.expression()?);
        }
        ch.push(self.expect(";")?);
        if !self.at(")") {
            self.expression_list(&mut ch)?;
        }
        ch.push(self.expect(")")?);
        ch.push(self.statement()?);
        Ok(AstNode::internal("for_statement", ch))
    }

    fn expression_list(&mut self, ch: &mut Vec<AstNode>) -> Result<(), Fail> {
        ch.push(self.expression()?);
        while let Some(c) = self.eat(",") {
            ch.push(c);
            ch.push(self.expression()?);
        }
        Ok(())
    }

    fn try_statement(&mut self) -> PResult {
        let mut ch = vec![self.expect("try")?];
        let mut has_resources = false;
        if let Some(open) = self.eat("(") {
            has_resources = true;
            let mut spec = vec![open];
            while !self.at(")") {
                let r = match self.try_local_var_decl(false)? {
                    Some(decl) => decl,
                    None => self.expression()?,
                };
                spec.push(AstNode::internal("resource", vec![r]));
                match self.eat(";") {
                    Some(s) => spec.push(s),
                    None => break,
                }
            }
            spec.push(self.expect(")")?);
            ch.push(AstNode::internal("resource_specification", spec));
        }
        ch.push(self.block()?);
        let mut handlers = 0;
        while self.at("catch") {
            let mut c = vec![self.bump(), self.expect("(")?];
            if let Some(m) = self.modifiers(false)? {
                c.push(m);
            }
            c.push(self.type_()?);
            while let Some(bar) = self.eat("|") {
                c.push(bar);
                c.push(self.type_()?);
            }
            c.push(self.ident()?);
            c.push(self.expect(")")?);
            c.push(self.block()?);
            ch.push(AstNode::internal("catch_clause", c));
            handlers += 1;
        }
        if let Some(f) = self.eat("finally") {
            let body = self.block()?;
            ch.push(AstNode::internal("finally_clause", vec![f, body]));
            handlers += 1;
        }
        if handlers == 0 && !has_resources {
            return Err(self.fail("catch"));
        }
        Ok(AstNode::internal("try_statement", ch))
    }

    fn switch_statement(&mut self) -> PResult {
        let mut ch = vec![self.expect("switch")?];
        self.par_expression(&mut ch)?;
        ch.push(self.expect("{")?);
        while !self.at("}") {
            let mut group = Vec::new();
            while self.at("case") || self.at("default") {
                let mut label = vec![self.bump()];
                if label[0].leaf_text == "case" {
                    label.push(self.ternary()?);
                }
                label.push(self.expect(":")?);
                group.push(AstNode::internal("switch_label", label));
            }
            if group.is_empty() {
                return Err(self.fail("case"));
            }
            while !(self.at("case") || self.at("default") || self.at("}") || self.eof()) {
                group.push(self.block_statement()?);
            }
            ch.push(AstNode::internal("switch_block_group", group));
        }
        ch.push(self.expect("}")?);
        Ok(AstNode::internal("switch_statement", ch))
    }

    // ---- expressions ----

    fn expression(&mut self) -> PResult {
        let lhs = self.ternary()?;
        let is_assign = self
            .peek(0)
            .is_some_and(|t| t.kind == TokenKind::Operator && ASSIGN_OPS.contains(&t.text.as_str()));
        if is_assign {
            let op = self.bump();
            let rhs = self.expression()?;
            return Ok(AstNode::internal("assignment", vec![lhs, op, rhs]));
        }
        Ok(lhs)
    }

    fn ternary(&mut self) -> PResult {
        let cond = self.binary(1)?;
        if let Some(q) = self.eat("?") {
            let then = self.expression()?;
            let colon = self.expect(":")?;
            let other = self.ternary()?;
            return Ok(AstNode::internal("ternary_expression", vec![cond, q, then, colon, other]));
        }
        Ok(cond)
    }

    fn binary(&mut self, min_prec: u8) -> PResult {
        let mut lhs = self.unary()?;
        while let Some(prec) = self.peek(0).and_then(binary_precedence) {
            if prec < min_prec {
                break;
            }
            let op = self.bump();
            if op.leaf_text == "instanceof" {
                let ty = self.type_()?;
                lhs = AstNode::internal("instanceof_expression", vec![lhs, op, ty]);
                continue;
            }
            let rhs = self.binary(prec + 1)?;
            lhs = AstNode::internal("binary_expression", vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult {
        let prefix = self.peek(0).is_some_and(|t| {
            t.kind == TokenKind::Operator && matches!(t.text.as_str(), "+" | "-" | "++" | "--" | "!" | "~")
        });
        if prefix {
            let op = self.bump();
            let operand = self.unary()?;
            return Ok(AstNode::internal("unary_expression", vec![op, operand]));
        }
        if self.at("(") {
            if let Some(cast) = self.try_cast()? {
                return Ok(cast);
            }
        }
        self.postfix()
    }

    fn try_cast(&mut self) -> Result<Option<AstNode>, Fail> {
        let m = self.mark();
        let open = self.bump();
        let primitive = self.at_primitive();
        let (ty, close) = match (self.type_(), self.expect(")")) {
            (Ok(ty), Ok(close)) => (ty, close),
            _ => {
                self.reset(m);
                return Ok(None);
            }
        };
        let operand_follows = self.peek(0).is_some_and(|t| match t.kind {
            TokenKind::Identifier | TokenKind::Literal => true,
            TokenKind::Keyword => matches!(t.text.as_str(), "this" | "super" | "new") || PRIMITIVES.contains(&t.text.as_str()),
            _ => matches!(t.text.as_str(), "(" | "!" | "~"),
        });
        let primitive_operand = primitive
            && self.peek(0).is_some_and(|t| {
                t.kind == TokenKind::Operator && matches!(t.text.as_str(), "+" | "-" | "++" | "--")
            });
        if !(operand_follows || primitive_operand) {
            self.reset(m);
            return Ok(None);
        }
        let operand = self.unary()?;
        Ok(Some(AstNode::internal("cast_expression", vec![open, ty, close, operand])))
    }

    fn postfix(&mut self) -> PResult {
        let mut e = self.primary()?;
        loop {
            if self.at(".") {
                let Some(next) = self.peek(1) else {
                    return Err(self.fail("identifier"));
                };
                match (next.kind, next.text.as_str()) {
                    (TokenKind::Identifier, _) => {
                        let dot = self.bump();
                        let name = self.bump();
                        if self.at("(") {
                            let args = self.arguments()?;
                            e = AstNode::internal("method_invocation", vec![e, dot, name, args]);
                        } else {
                            e = AstNode::internal("field_access", vec![e, dot, name]);
                        }
                    }
                    (TokenKind::Keyword, "class") => {
                        let dot = self.bump();
                        let kw = self.bump();
                        e = AstNode::internal("class_literal", vec![e, dot, kw]);
                    }
                    (TokenKind::Keyword, "this" | "super") => {
                        let dot = self.bump();
                        let kw = self.bump();
                        e = AstNode::internal("field_access", vec![e, dot, kw]);
                    }
                    _ => {
                        self.pos += 1;
                        return Err(self.fail("identifier"));
                    }
                }
            } else if self.at("[") {
                if self.peek_is(1, "]") {
                    // `Name[].class`
                    let mut ch = vec![e];
                    self.dims(&mut ch);
                    ch.push(self.expect(".")?);
                    ch.push(self.expect("class")?);
                    e = AstNode::internal("class_literal", ch);
                    continue;
                }
                let open = self.bump();
                let idx = self.expression()?;
                let close = self.expect("]")?;
                e = AstNode::internal("array_access", vec![e, open, idx, close]);
            } else if self.peek(0).is_some_and(|t| t.kind == TokenKind::Operator && (t.text == "++" || t.text == "--")) {
                let op = self.bump();
                e = AstNode::internal("postfix_expression", vec![e, op]);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> PResult {
        let Some(tok) = self.peek(0) else {
            return Err(self.fail("expression"));
        };
        match tok.kind {
            TokenKind::Literal => Ok(self.bump()),
            TokenKind::Identifier => {
                let name = self.bump();
                if self.at("(") {
                    let args = self.arguments()?;
                    return Ok(AstNode::internal("method_invocation", vec![name, args]));
                }
                Ok(name)
            }
            TokenKind::Keyword => match tok.text.as_str() {
                "this" | "super" => {
                    let kw = self.bump();
                    if self.at("(") {
                        let args = self.arguments()?;
                        return Ok(AstNode::internal("method_invocation", vec![kw, args]));
                    }
                    Ok(kw)
                }
                "new" => self.creator(),
                "void" => {
                    let v = self.bump();
                    let dot = self.expect(".")?;
                    let kw = self.expect("class")?;
                    Ok(AstNode::internal("class_literal", vec![v, dot, kw]))
                }
                t if PRIMITIVES.contains(&t) => {
                    let ty = self.type_()?;
                    let dot = self.expect(".")?;
                    let kw = self.expect("class")?;
                    Ok(AstNode::internal("class_literal", vec![ty, dot, kw]))
                }
                _ => Err(self.fail("expression")),
            },
            _ if tok.text == "(" => {
                let open = self.bump();
                let inner = self.expression()?;
                let close = self.expect(")")?;
                Ok(AstNode::internal("parenthesized_expression", vec![open, inner, close]))
            }
            _ => Err(self.fail("expression")),
        }
    }

    fn creator(&mut self) -> PResult {
        let mut ch = vec![self.expect("new")?];
        let mut ty = Vec::new();
        self.type_name(&mut ty)?;
        if self.pending_gt != 0 {
            return Err(self.fail(">"));
        }
        ch.push(AstNode::internal("type", ty));
        if self.at("[") {
            while let Some(open) = self.eat("[") {
                ch.push(open);
                if !self.at("]") {
                    ch.push(self.expression()?);
                }
                ch.push(self.expect("]")?);
            }
            if self.at("{") {
                ch.push(self.array_initializer()?);
            }
            return Ok(AstNode::internal("array_creation", ch));
        }
        ch.push(self.arguments()?);
        if self.at("{") {
            ch.push(self.class_body()?);
        }
        Ok(AstNode::internal("object_creation", ch))
    }

    fn arguments(&mut self) -> PResult {
        let mut ch = vec![self.expect("(")?];
        if !self.at(")") {
            self.expression_list(&mut ch)?;
        }
        ch.push(self.expect(")")?);
        Ok(AstNode::internal("arguments", ch))
    }
}

fn group_or_single(kind: &str, mut items: Vec<AstNode>) -> AstNode {
    if items.len() == 1 {
        items.pop().unwrap()
    } else {
        AstNode::synthetic_group(kind, items)
    }
}

/// Parses Java source into an AST.
///
/// Tries, in order: a compilation unit, a sequence of class members (as if
/// wrapped in a class body), and a sequence of block statements (as if
/// wrapped in a method body). When a wrapped attempt yields a single item
/// that item is the root; otherwise the items hang off a synthetic group
/// node that subtree enumeration skips.
pub fn parse(text: &str) -> Result<AstNode, JavaError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(JavaError::Syntax {
            offset: 0,
            expected: vec!["declaration".to_string()],
        });
    }
    let mut errors = Vec::new();

    let mut p = Parser::new(&toks, text.len());
    match p.compilation_unit() {
        Ok(n) => return Ok(n),
        Err(Fail) => errors.push((p.furthest, p.error_offset(), p.expected)),
    }

    let mut p = Parser::new(&toks, text.len());
    let members = (|| -> Result<Vec<AstNode>, Fail> {
        let mut items = Vec::new();
        while !p.eof() {
            items.push(p.member()?);
        }
        Ok(items)
    })();
    match members {
        Ok(items) => return Ok(group_or_single("member_list", items)),
        Err(Fail) => errors.push((p.furthest, p.error_offset(), p.expected)),
    }

    let mut p = Parser::new(&toks, text.len());
    let stmts = (|| -> Result<Vec<AstNode>, Fail> {
        let mut items = Vec::new();
        while !p.eof() {
            items.push(p.block_statement()?);
        }
        Ok(items)
    })();
    match stmts {
        Ok(items) => return Ok(group_or_single("statement_list", items)),
        Err(Fail) => errors.push((p.furthest, p.error_offset(), p.expected)),
    }

    // Report the attempt that got furthest; earlier attempts win ties.
    let (_, offset, expected) = errors
        .into_iter()
        .rev()
        .max_by_key(|(furthest, _, _)| *furthest)
        .expect("three attempts recorded");
    Err(JavaError::Syntax {
        offset,
        expected: expected.into_iter().collect(),
    })
}
