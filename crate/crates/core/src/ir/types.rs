//! A small recursive-descent parser for the LLVM type grammar.
//!
//! Only the shapes needed to compare function signatures are modeled. Every
//! pointer, typed (`%struct.bfd*`, `i8 addrspace(1)*`) or opaque (`ptr`),
//! collapses to [`IrType::Ptr`].

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IrType {
    Void,
    Int(u32),
    Float(&'static str),
    Ptr,
    Named(String),
    Array(u64, Box<IrType>),
    Vector { len: u64, scalable: bool, elem: Box<IrType> },
    Struct { fields: Vec<IrType>, packed: bool },
    Function { ret: Box<IrType>, params: Vec<IrType>, variadic: bool },
    Label,
    Metadata,
    Token,
}

const FLOAT_KINDS: [&str; 7] = [
    "half",
    "bfloat",
    "float",
    "double",
    "x86_fp80",
    "fp128",
    "ppc_fp128",
];

impl IrType {
    pub fn is_integer(&self) -> bool {
        matches!(self, IrType::Int(_))
            || matches!(self, IrType::Vector { elem, .. } if elem.is_integer())
    }

    pub fn is_struct_like(&self) -> bool {
        matches!(self, IrType::Named(_) | IrType::Struct { .. })
    }
}

impl fmt::Display for IrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrType::Void => f.write_str("void"),
            IrType::Int(w) => write!(f, "i{w}"),
            IrType::Float(k) => f.write_str(k),
            IrType::Ptr => f.write_str("ptr"),
            IrType::Named(n) => write!(f, "%{n}"),
            IrType::Array(n, t) => write!(f, "[{n} x {t}]"),
            IrType::Vector { len, scalable, elem } => {
                if *scalable {
                    write!(f, "<vscale x {len} x {elem}>")
                } else {
                    write!(f, "<{len} x {elem}>")
                }
            }
            IrType::Struct { fields, packed } => {
                let (open, close) = if *packed { ("<{", "}>") } else { ("{", "}") };
                f.write_str(open)?;
                write_list(f, fields, false)?;
                f.write_str(close)
            }
            IrType::Function { ret, params, variadic } => {
                write!(f, "{ret}(")?;
                write_list(f, params, *variadic)?;
                f.write_str(")")
            }
            IrType::Label => f.write_str("label"),
            IrType::Metadata => f.write_str("metadata"),
            IrType::Token => f.write_str("token"),
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[IrType], variadic: bool) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{t}")?;
    }
    if variadic {
        if !items.is_empty() {
            f.write_str(",")?;
        }
        f.write_str("...")?;
    }
    Ok(())
}

/// Cursor over a type spelling. `pos` is a byte offset into `src`.
pub(crate) struct TypeCursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> TypeCursor<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        TypeCursor { src, pos: 0 }
    }

    pub(crate) fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    pub(crate) fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, word: &str) -> bool {
        let rest = self.rest();
        if rest.starts_with(word) {
            let after = rest[word.len()..].chars().next();
            if !after.is_some_and(is_ident_char) {
                self.pos += word.len();
                return true;
            }
        }
        false
    }

    fn number(&mut self) -> Option<u64> {
        let rest = self.rest();
        let len = rest.bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return None;
        }
        let n = rest[..len].parse().ok()?;
        self.pos += len;
        Some(n)
    }

    fn ident(&mut self) -> Option<String> {
        let rest = self.rest();
        if let Some(stripped) = rest.strip_prefix('"') {
            let end = stripped.find('"')?;
            let name = stripped[..end].to_string();
            self.pos += end + 2;
            return Some(name);
        }
        let len: usize = rest
            .chars()
            .take_while(|c| is_ident_char(*c))
            .map(char::len_utf8)
            .sum();
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some(rest[..len].to_string())
    }

    /// Parses one complete type including pointer and function-type suffixes.
    pub(crate) fn parse_type(&mut self) -> Option<IrType> {
        self.skip_ws();
        let mut ty = self.parse_base()?;
        loop {
            let save = self.pos;
            self.skip_ws();
            if self.eat("*") {
                ty = IrType::Ptr;
                continue;
            }
            if self.eat_word("addrspace") {
                self.skip_ws();
                if self.eat("(") && self.number().is_some() && self.eat(")") {
                    self.skip_ws();
                    if self.eat("*") {
                        ty = IrType::Ptr;
                        continue;
                    }
                    if ty == IrType::Ptr {
                        continue;
                    }
                }
                self.pos = save;
                break;
            }
            if self.peek() == Some('(') {
                // Function type: `ret (params)`.
                self.pos += 1;
                let (params, variadic) = self.parse_param_types()?;
                ty = IrType::Function {
                    ret: Box::new(ty),
                    params,
                    variadic,
                };
                continue;
            }
            self.pos = save;
            break;
        }
        Some(ty)
    }

    /// Parses `T, T, ...)` after an opening parenthesis.
    fn parse_param_types(&mut self) -> Option<(Vec<IrType>, bool)> {
        let mut params = Vec::new();
        let mut variadic = false;
        self.skip_ws();
        if self.eat(")") {
            return Some((params, variadic));
        }
        loop {
            self.skip_ws();
            if self.eat("...") {
                variadic = true;
                self.skip_ws();
                if !self.eat(")") {
                    return None;
                }
                return Some((params, variadic));
            }
            params.push(self.parse_type()?);
            self.skip_param_attrs();
            self.skip_ws();
            if self.eat(")") {
                return Some((params, variadic));
            }
            if !self.eat(",") {
                return None;
            }
        }
    }

    /// Skips parameter attributes that may follow a type inside a type list.
    pub(crate) fn skip_param_attrs(&mut self) {
        loop {
            let save = self.pos;
            self.skip_ws();
            let Some(word) = self.peek_word() else {
                self.pos = save;
                return;
            };
            if !PARAM_ATTRS.contains(&word.as_str()) {
                self.pos = save;
                return;
            }
            self.pos += word.len();
            self.skip_ws();
            match word.as_str() {
                "align" | "addrspace" => {
                    if self.eat("(") {
                        self.skip_balanced_after_open('(', ')');
                    } else {
                        self.number();
                    }
                }
                _ => {
                    if self.peek() == Some('(') {
                        self.pos += 1;
                        self.skip_balanced_after_open('(', ')');
                    }
                }
            }
        }
    }

    pub(crate) fn peek_word(&self) -> Option<String> {
        let rest = self.rest();
        let len: usize = rest
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .map(char::len_utf8)
            .sum();
        (len > 0).then(|| rest[..len].to_string())
    }

    fn skip_balanced_after_open(&mut self, open: char, close: char) {
        let mut depth = 1usize;
        while let Some(c) = self.peek() {
            self.pos += c.len_utf8();
            if c == open {
                depth += 1;
            } else if c == close {
                depth -= 1;
                if depth == 0 {
                    return;
                }
            }
        }
    }

    fn parse_base(&mut self) -> Option<IrType> {
        self.skip_ws();
        let c = self.peek()?;
        match c {
            '%' => {
                self.pos += 1;
                Some(IrType::Named(self.ident()?))
            }
            '[' => {
                self.pos += 1;
                self.skip_ws();
                let n = self.number()?;
                self.skip_ws();
                if !self.eat_word("x") {
                    return None;
                }
                let elem = self.parse_type()?;
                self.skip_ws();
                self.eat("]").then(|| IrType::Array(n, Box::new(elem)))
            }
            '<' => {
                self.pos += 1;
                self.skip_ws();
                if self.eat("{") {
                    let fields = self.parse_fields('}')?;
                    self.skip_ws();
                    return self.eat(">").then_some(IrType::Struct { fields, packed: true });
                }
                let scalable = self.eat_word("vscale");
                if scalable {
                    self.skip_ws();
                    if !self.eat_word("x") {
                        return None;
                    }
                    self.skip_ws();
                }
                let len = self.number()?;
                self.skip_ws();
                if !self.eat_word("x") {
                    return None;
                }
                let elem = self.parse_type()?;
                self.skip_ws();
                self.eat(">").then(|| IrType::Vector {
                    len,
                    scalable,
                    elem: Box::new(elem),
                })
            }
            '{' => {
                self.pos += 1;
                let fields = self.parse_fields('}')?;
                Some(IrType::Struct { fields, packed: false })
            }
            _ => {
                let word = self.peek_word()?;
                let ty = if word == "void" {
                    IrType::Void
                } else if word == "ptr" {
                    IrType::Ptr
                } else if word == "label" {
                    IrType::Label
                } else if word == "metadata" {
                    IrType::Metadata
                } else if word == "token" {
                    IrType::Token
                } else if let Some(kind) = FLOAT_KINDS.iter().find(|k| **k == word) {
                    IrType::Float(kind)
                } else if let Some(width) = word.strip_prefix('i').and_then(|w| w.parse().ok()) {
                    IrType::Int(width)
                } else {
                    return None;
                };
                self.pos += word.len();
                Some(ty)
            }
        }
    }

    fn parse_fields(&mut self, close: char) -> Option<Vec<IrType>> {
        let mut fields = Vec::new();
        self.skip_ws();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Some(fields);
        }
        loop {
            fields.push(self.parse_type()?);
            self.skip_ws();
            if self.peek() == Some(close) {
                self.pos += 1;
                return Some(fields);
            }
            if !self.eat(",") {
                return None;
            }
        }
    }
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '$' | '-')
}

pub(crate) const PARAM_ATTRS: &[&str] = &[
    "noundef",
    "nonnull",
    "signext",
    "zeroext",
    "inreg",
    "noalias",
    "nocapture",
    "readonly",
    "readnone",
    "writeonly",
    "returned",
    "immarg",
    "nofree",
    "nest",
    "swiftself",
    "swifterror",
    "swiftasync",
    "align",
    "dereferenceable",
    "dereferenceable_or_null",
    "byval",
    "byref",
    "sret",
    "elementtype",
    "inalloca",
    "preallocated",
    "noundef",
    "allocalign",
    "allocptr",
    "captures",
    "range",
    "initializes",
    "dead_on_unwind",
    "writable",
    "nofpclass",
];

/// Parses a complete type spelling; trailing text is an error.
pub fn parse_type(text: &str) -> Option<IrType> {
    let mut cursor = TypeCursor::new(text);
    let ty = cursor.parse_type()?;
    cursor.skip_ws();
    cursor.rest().is_empty().then_some(ty)
}
