//! Restricted structural parser for Python-syntax kernel sources.
//!
//! Only the statements that matter for kernel detection are understood:
//! imports, decorators, function and class definitions, call expressions
//! (including the `kernel[grid](...)` launch form) and `self.attr = ...`
//! bindings. Everything else is tokenized for bracket and string balance and
//! then skipped.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::source::SourceUnit;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportBinding {
    pub module_path: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    /// Qualified name: `Class.method` for methods, bare name otherwise.
    pub name: String,
    /// Alias-resolved dotted decorator names.
    pub decorators: Vec<String>,
    /// Bare names invoked in the body (last segment of dotted calls).
    pub callees: Vec<String>,
    /// Subset of `callees` invoked through `name[grid](...)`.
    pub grid_launched: Vec<String>,
    /// Alias-resolved dotted path of every call site in the body.
    pub call_paths: Vec<String>,
    /// True when some call site in the source launches this function with a grid subscript.
    pub is_grid_launch: bool,
    /// True for functions defined at module level (not methods, not nested).
    pub top_level: bool,
    /// True when a decorator resolved to a module-level variable instead of an import.
    pub dynamic_decorator: bool,
    pub line: usize,
}

impl FunctionInfo {
    pub fn bare_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }

    pub fn has_decorator(&self, dotted: &str) -> bool {
        self.decorators.iter().any(|d| d == dotted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntaxSummary {
    pub imports: Vec<ImportBinding>,
    pub functions: Vec<FunctionInfo>,
    pub top_level_calls: Vec<String>,
    /// Resolved call paths of module-level call sites.
    pub top_level_call_paths: Vec<String>,
    /// Qualified names defined more than once (the last definition is kept).
    pub duplicate_defs: Vec<String>,
}

impl SyntaxSummary {
    pub fn function(&self, name: &str) -> Option<&FunctionInfo> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Number,
    Str,
    Op(char),
}

impl Tok {
    fn is_op(&self, c: char) -> bool {
        matches!(self, Tok::Op(o) if *o == c)
    }

    fn name(&self) -> Option<&str> {
        match self {
            Tok::Name(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug)]
struct LogicalLine {
    indent: usize,
    line: usize,
    toks: Vec<Tok>,
}

const STRING_PREFIXES: &[&str] = &["r", "b", "f", "u", "rb", "br", "fr", "rf"];

const KEYWORDS: &[&str] = &[
    "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif", "else", "except",
    "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise",
    "return", "try", "while", "with", "yield", "None", "True", "False",
];

fn tokenize(text: &str) -> Result<Vec<LogicalLine>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut lines = Vec::new();
    let mut i = 0;
    let mut line_no = 1;
    let mut depth: Vec<(char, usize)> = Vec::new();
    let mut current: Vec<Tok> = Vec::new();
    let mut current_indent = 0;
    let mut current_line = 1;
    let mut at_line_start = true;

    while i < chars.len() {
        if at_line_start && depth.is_empty() {
            let mut col = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                col = if chars[i] == '\t' { (col / 8 + 1) * 8 } else { col + 1 };
                i += 1;
            }
            at_line_start = false;
            if current.is_empty() {
                current_indent = col;
                current_line = line_no;
            }
            continue;
        }
        let c = chars[i];
        match c {
            '\n' => {
                line_no += 1;
                i += 1;
                if depth.is_empty() {
                    if !current.is_empty() {
                        lines.push(LogicalLine {
                            indent: current_indent,
                            line: current_line,
                            toks: std::mem::take(&mut current),
                        });
                    }
                    at_line_start = true;
                }
            }
            '\r' | ' ' | '\t' | '\x0c' => i += 1,
            '\\' => {
                // explicit line continuation
                if chars.get(i + 1) == Some(&'\n') {
                    line_no += 1;
                    i += 2;
                } else if chars.get(i + 1) == Some(&'\r') && chars.get(i + 2) == Some(&'\n') {
                    line_no += 1;
                    i += 3;
                } else {
                    return Err(ParseError::new(line_no, "stray backslash"));
                }
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '"' | '\'' => {
                i = lex_string(&chars, i, &mut line_no)?;
                current.push(Tok::Str);
            }
            '(' | '[' | '{' => {
                depth.push((c, line_no));
                current.push(Tok::Op(c));
                i += 1;
            }
            ')' | ']' | '}' => {
                let open = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                match depth.pop() {
                    Some((o, _)) if o == open => {}
                    Some((o, l)) => {
                        return Err(ParseError::new(
                            line_no,
                            format!("'{c}' does not match '{o}' opened at line {l}"),
                        ))
                    }
                    None => return Err(ParseError::new(line_no, format!("unmatched '{c}'"))),
                }
                current.push(Tok::Op(c));
                i += 1;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                while i < chars.len() {
                    let d = chars[i];
                    let exponent_sign = (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_alphanumeric() || d == '.' || d == '_' || exponent_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                current.push(Tok::Number);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                if i < chars.len()
                    && (chars[i] == '"' || chars[i] == '\'')
                    && STRING_PREFIXES.contains(&ident.to_ascii_lowercase().as_str())
                {
                    i = lex_string(&chars, i, &mut line_no)?;
                    current.push(Tok::Str);
                } else {
                    current.push(Tok::Name(ident));
                }
            }
            c if c.is_ascii_punctuation() => {
                current.push(Tok::Op(c));
                i += 1;
            }
            other => return Err(ParseError::new(line_no, format!("unexpected character {other:?}"))),
        }
    }
    if let Some((o, l)) = depth.pop() {
        return Err(ParseError::new(l, format!("unclosed '{o}'")));
    }
    if !current.is_empty() {
        lines.push(LogicalLine {
            indent: current_indent,
            line: current_line,
            toks: current,
        });
    }
    Ok(lines)
}

/// Lexes a string literal starting at the opening quote; returns the index after it.
fn lex_string(chars: &[char], start: usize, line_no: &mut usize) -> Result<usize, ParseError> {
    let q = chars[start];
    let opened_at = *line_no;
    let triple = chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let mut i = if triple { start + 3 } else { start + 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            if chars.get(i + 1) == Some(&'\n') {
                *line_no += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                return Err(ParseError::new(opened_at, "unterminated string literal"));
            }
            *line_no += 1;
        }
        if c == q {
            if !triple {
                return Ok(i + 1);
            }
            if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return Ok(i + 3);
            }
        }
        i += 1;
    }
    Err(ParseError::new(opened_at, "unterminated string literal"))
}

#[derive(Debug)]
enum Scope {
    Class { indent: usize, name: String },
    Function { indent: usize, index: usize },
}

impl Scope {
    fn indent(&self) -> usize {
        match self {
            Scope::Class { indent, .. } | Scope::Function { indent, .. } => *indent,
        }
    }
}

#[derive(Debug)]
struct CallSite {
    dotted: String,
    grid: bool,
}

/// Reads `Name (. Name)*` starting at `i`; returns the dotted path and the index after it.
fn dotted_at(toks: &[Tok], mut i: usize) -> Option<(String, usize)> {
    let mut path = toks.get(i)?.name()?.to_string();
    i += 1;
    while toks.get(i).is_some_and(|t| t.is_op('.')) {
        match toks.get(i + 1).and_then(Tok::name) {
            Some(n) => {
                path.push('.');
                path.push_str(n);
                i += 2;
            }
            None => break,
        }
    }
    Some((path, i))
}

fn matching_close(toks: &[Tok], open_idx: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, t) in toks.iter().enumerate().skip(open_idx) {
        match t {
            Tok::Op('(' | '[' | '{') => depth += 1,
            Tok::Op(')' | ']' | '}') => {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
            _ => {}
        }
    }
    None
}

fn scan_calls(toks: &[Tok]) -> Vec<CallSite> {
    let mut calls = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let Some(name) = toks[i].name() else {
            if toks[i].is_op('@') && i > 0 && is_operand_end(&toks[i - 1]) {
                calls.push(CallSite {
                    dotted: "operator.matmul".to_string(),
                    grid: false,
                });
            }
            i += 1;
            continue;
        };
        let after_dot = i > 0 && toks[i - 1].is_op('.');
        if after_dot {
            // method on an expression result, e.g. `f(x).sum()`
            let expr_receiver = i > 1 && matches!(toks[i - 2], Tok::Op(')' | ']'));
            if !expr_receiver {
                i += 1;
                continue;
            }
        }
        if KEYWORDS.contains(&name) {
            i += 1;
            continue;
        }
        let Some((mut dotted, next)) = dotted_at(toks, i) else {
            i += 1;
            continue;
        };
        if after_dot {
            dotted = format!("<expr>.{dotted}");
        }
        match toks.get(next) {
            Some(Tok::Op('(')) => calls.push(CallSite { dotted, grid: false }),
            Some(Tok::Op('[')) => {
                if let Some(close) = matching_close(toks, next) {
                    if toks.get(close + 1).is_some_and(|t| t.is_op('(')) {
                        calls.push(CallSite { dotted, grid: true });
                    }
                }
            }
            _ => {}
        }
        i = next;
    }
    calls
}

fn is_operand_end(t: &Tok) -> bool {
    matches!(t, Tok::Name(_) | Tok::Number | Tok::Str | Tok::Op(')' | ']'))
}

struct Builder {
    aliases: HashMap<String, String>,
    module_vars: HashMap<String, ()>,
    imports: Vec<ImportBinding>,
    functions: Vec<FunctionInfo>,
    raw_calls: Vec<Vec<CallSite>>,
    top_level_calls: Vec<CallSite>,
    /// (class name, attribute) -> unresolved dotted constructor path
    self_attrs: BTreeMap<(String, String), String>,
    function_class: Vec<Option<String>>,
}

impl Builder {
    fn bind_import(&mut self, module_path: String, alias: String) {
        self.aliases.insert(alias.clone(), module_path.clone());
        self.imports.push(ImportBinding { module_path, alias });
    }

    fn resolve(&self, dotted: &str) -> String {
        let (head, rest) = match dotted.split_once('.') {
            Some((h, r)) => (h, Some(r)),
            None => (dotted, None),
        };
        match (self.aliases.get(head), rest) {
            (Some(full), Some(r)) => format!("{full}.{r}"),
            (Some(full), None) => full.clone(),
            (None, _) => dotted.to_string(),
        }
    }
}

fn parse_import(toks: &[Tok], line: usize, b: &mut Builder) -> Result<(), ParseError> {
    let mut i = 1;
    loop {
        let (path, next) = dotted_at(toks, i).ok_or_else(|| ParseError::new(line, "malformed import"))?;
        i = next;
        if toks.get(i).and_then(Tok::name) == Some("as") {
            let alias = toks
                .get(i + 1)
                .and_then(Tok::name)
                .ok_or_else(|| ParseError::new(line, "missing alias after 'as'"))?;
            b.bind_import(path, alias.to_string());
            i += 2;
        } else {
            // `import a.b` binds `a`
            let head = path.split('.').next().unwrap_or(&path).to_string();
            b.bind_import(head.clone(), head);
        }
        match toks.get(i) {
            Some(t) if t.is_op(',') => i += 1,
            Some(t) if t.is_op(';') => return Ok(()),
            None => return Ok(()),
            Some(_) => return Err(ParseError::new(line, "unexpected token in import")),
        }
    }
}

fn parse_from_import(toks: &[Tok], line: usize, b: &mut Builder) -> Result<(), ParseError> {
    let mut i = 1;
    let mut module = String::new();
    while toks.get(i).is_some_and(|t| t.is_op('.')) {
        module.push('.');
        i += 1;
    }
    if let Some((path, next)) = dotted_at(toks, i) {
        if path != "import" {
            module.push_str(&path);
            i = next;
        }
    }
    if toks.get(i).and_then(Tok::name) != Some("import") {
        return Err(ParseError::new(line, "expected 'import' in from-import"));
    }
    i += 1;
    if toks.get(i).is_some_and(|t| t.is_op('(')) {
        i += 1;
    }
    while i < toks.len() {
        match &toks[i] {
            Tok::Op('*') => return Ok(()),
            Tok::Op(',' | ')') => i += 1,
            Tok::Op(';') => return Ok(()),
            Tok::Name(name) => {
                let full = format!("{module}.{name}");
                if toks.get(i + 1).and_then(Tok::name) == Some("as") {
                    let alias = toks
                        .get(i + 2)
                        .and_then(Tok::name)
                        .ok_or_else(|| ParseError::new(line, "missing alias after 'as'"))?;
                    b.bind_import(full, alias.to_string());
                    i += 3;
                } else {
                    b.bind_import(full, name.clone());
                    i += 1;
                }
            }
            _ => return Err(ParseError::new(line, "unexpected token in from-import")),
        }
    }
    Ok(())
}

/// Parses `unit` into a structural summary.
pub fn parse_source(unit: &SourceUnit) -> Result<SyntaxSummary, ParseError> {
    let lines = tokenize(&unit.raw_text)?;
    let mut b = Builder {
        aliases: HashMap::new(),
        module_vars: HashMap::new(),
        imports: Vec::new(),
        functions: Vec::new(),
        raw_calls: Vec::new(),
        top_level_calls: Vec::new(),
        self_attrs: BTreeMap::new(),
        function_class: Vec::new(),
    };
    let mut scopes: Vec<Scope> = Vec::new();
    let mut pending_decorators: Vec<(String, bool)> = Vec::new();

    for ll in &lines {
        while scopes.last().is_some_and(|s| ll.indent <= s.indent()) {
            scopes.pop();
        }
        let toks = &ll.toks;
        let first = toks[0].name();
        let (is_def, def_offset) = match (first, toks.get(1).and_then(Tok::name)) {
            (Some("def"), _) => (true, 1),
            (Some("async"), Some("def")) => (true, 2),
            _ => (false, 0),
        };

        if toks[0].is_op('@') {
            let (path, _) = dotted_at(toks, 1).ok_or_else(|| ParseError::new(ll.line, "malformed decorator"))?;
            let head = path.split('.').next().unwrap_or(&path);
            let dynamic = !b.aliases.contains_key(head) && b.module_vars.contains_key(head);
            pending_decorators.push((b.resolve(&path), dynamic));
            continue;
        }

        if is_def {
            let name = toks
                .get(def_offset)
                .and_then(Tok::name)
                .ok_or_else(|| ParseError::new(ll.line, "missing function name"))?
                .to_string();
            let class = match scopes.last() {
                Some(Scope::Class { name, .. }) => Some(name.clone()),
                _ => None,
            };
            let qualified = match &class {
                Some(c) => format!("{c}.{name}"),
                None => name.clone(),
            };
            let dynamic_decorator = pending_decorators.iter().any(|(_, d)| *d);
            let decorators = pending_decorators
                .drain(..)
                .filter(|(_, d)| !d)
                .map(|(p, _)| p)
                .collect();
            let index = b.functions.len();
            b.functions.push(FunctionInfo {
                name: qualified,
                decorators,
                callees: Vec::new(),
                grid_launched: Vec::new(),
                call_paths: Vec::new(),
                is_grid_launch: false,
                top_level: scopes.is_empty(),
                dynamic_decorator,
                line: ll.line,
            });
            b.function_class.push(class);
            // one-line bodies: `def f(x): return g(x)`
            let body_calls = toks
                .iter()
                .position(|t| t.is_op('('))
                .and_then(|open| matching_close(toks, open))
                .and_then(|close| {
                    toks[close + 1..]
                        .iter()
                        .position(|t| t.is_op(':'))
                        .map(|p| close + 1 + p + 1)
                })
                .map(|start| scan_calls(&toks[start..]))
                .unwrap_or_default();
            b.raw_calls.push(body_calls);
            scopes.push(Scope::Function {
                indent: ll.indent,
                index,
            });
            continue;
        }
        // decorators only apply to the next def; class decorators are dropped
        pending_decorators.clear();

        match first {
            Some("import") => {
                parse_import(toks, ll.line, &mut b)?;
                continue;
            }
            Some("from") if toks.iter().any(|t| t.name() == Some("import")) => {
                parse_from_import(toks, ll.line, &mut b)?;
                continue;
            }
            Some("class") => {
                let name = toks
                    .get(1)
                    .and_then(Tok::name)
                    .ok_or_else(|| ParseError::new(ll.line, "missing class name"))?;
                scopes.push(Scope::Class {
                    indent: ll.indent,
                    name: name.to_string(),
                });
                continue;
            }
            _ => {}
        }

        let calls = scan_calls(toks);
        let innermost_fn = scopes.iter().rev().find_map(|s| match s {
            Scope::Function { index, .. } => Some(*index),
            _ => None,
        });
        match innermost_fn {
            Some(index) => {
                // `self.attr = something(...)` inside a method
                if let (Some("self"), true, Some(attr), true) = (
                    first,
                    toks.get(1).is_some_and(|t| t.is_op('.')),
                    toks.get(2).and_then(Tok::name),
                    toks.get(3).is_some_and(|t| t.is_op('=')) && !toks.get(4).is_some_and(|t| t.is_op('=')),
                ) {
                    if let (Some(class), Some((ctor, after))) = (b.function_class[index].clone(), dotted_at(toks, 4)) {
                        if toks.get(after).is_some_and(|t| t.is_op('(')) {
                            b.self_attrs.insert((class, attr.to_string()), ctor);
                        }
                    }
                }
                b.raw_calls[index].extend(calls);
            }
            None => {
                if scopes.is_empty() {
                    if let (Some(var), Some(Tok::Op('='))) = (first, toks.get(1)) {
                        if !toks.get(2).is_some_and(|t| t.is_op('=')) {
                            b.module_vars.insert(var.to_string(), ());
                        }
                    }
                }
                b.top_level_calls.extend(calls);
            }
        }
    }

    // resolve call sites now that every import and attribute binding is known
    let mut functions = std::mem::take(&mut b.functions);
    let raw_calls = std::mem::take(&mut b.raw_calls);
    for ((f, calls), class) in functions.iter_mut().zip(raw_calls).zip(&b.function_class) {
        for call in calls {
            let resolved = resolve_call(&b, class.as_deref(), &call.dotted);
            let bare = call.dotted.rsplit('.').next().unwrap_or(&call.dotted).to_string();
            if call.grid && !f.grid_launched.contains(&bare) {
                f.grid_launched.push(bare.clone());
            }
            if !f.callees.contains(&bare) {
                f.callees.push(bare);
            }
            f.call_paths.push(resolved);
        }
    }
    let mut top_level_calls = Vec::new();
    let mut top_level_call_paths = Vec::new();
    let mut launched: Vec<String> = Vec::new();
    for call in &b.top_level_calls {
        let bare = call.dotted.rsplit('.').next().unwrap_or(&call.dotted).to_string();
        if call.grid {
            launched.push(bare.clone());
        }
        if !top_level_calls.contains(&bare) {
            top_level_calls.push(bare);
        }
        top_level_call_paths.push(b.resolve(&call.dotted));
    }
    launched.extend(functions.iter().flat_map(|f| f.grid_launched.iter().cloned()));
    for f in functions.iter_mut() {
        f.is_grid_launch = launched.iter().any(|l| l == f.bare_name());
    }

    // duplicate definitions: keep the last, mirroring rebinding
    let mut duplicate_defs = Vec::new();
    let mut last_index: HashMap<String, usize> = HashMap::new();
    for (i, f) in functions.iter().enumerate() {
        if last_index.insert(f.name.clone(), i).is_some() && !duplicate_defs.contains(&f.name) {
            duplicate_defs.push(f.name.clone());
        }
    }
    let functions = functions
        .into_iter()
        .enumerate()
        .filter(|(i, f)| last_index[&f.name] == *i)
        .map(|(_, f)| f)
        .collect();

    Ok(SyntaxSummary {
        imports: b.imports,
        functions,
        top_level_calls,
        top_level_call_paths,
        duplicate_defs,
    })
}

fn resolve_call(b: &Builder, class: Option<&str>, dotted: &str) -> String {
    if let (Some(class), Some(attr)) = (class, dotted.strip_prefix("self.")) {
        if !attr.contains('.') {
            if let Some(ctor) = b.self_attrs.get(&(class.to_string(), attr.to_string())) {
                return b.resolve(ctor);
            }
        }
    }
    b.resolve(dotted)
}
