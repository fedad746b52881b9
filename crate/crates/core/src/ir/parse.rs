use thiserror::Error;

use super::validate::{validate_module, Diagnostic};
use super::{
    BinOp, Block, CmpOp, Expr, Extern, Function, HandlerModule, Lit, Param, Sample, SampleSink,
    SpecValue, Stmt, Type, ValueKind,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid module: {}", format_diags(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_diags(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug)]
enum Sexp {
    Atom(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

fn err<T>(pos: Pos, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::Syntax {
        line: pos.line,
        col: pos.col,
        message: message.into(),
    })
}

fn read_all(text: &str) -> Result<Vec<Sexp>, ParseError> {
    let mut stack: Vec<(Vec<Sexp>, Pos)> = Vec::new();
    let mut top = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                chars.next();
                col += 1;
                stack.push((Vec::new(), pos));
            }
            ')' => {
                chars.next();
                col += 1;
                let (items, open) = match stack.pop() {
                    Some(x) => x,
                    None => return err(pos, "unexpected `)`"),
                };
                let list = Sexp::List(items, open);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => top.push(list),
                }
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                    col += 1;
                }
                let a = Sexp::Atom(atom, pos);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(a),
                    None => top.push(a),
                }
            }
        }
    }
    if let Some((_, open)) = stack.pop() {
        return err(open, "unclosed `(`");
    }
    Ok(top)
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    cs.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

fn ident(s: &Sexp, what: &str) -> Result<String, ParseError> {
    match s {
        Sexp::Atom(a, _) if is_ident(a) => Ok(a.clone()),
        other => err(other.pos(), format!("expected {what}")),
    }
}

fn int_atom(s: &Sexp, what: &str) -> Result<i64, ParseError> {
    match s {
        Sexp::Atom(a, p) => a
            .parse::<i64>()
            .or_else(|_| err(*p, format!("expected integer {what}"))),
        other => err(other.pos(), format!("expected integer {what}")),
    }
}

fn head(items: &[Sexp], pos: Pos) -> Result<&str, ParseError> {
    match items.first() {
        Some(Sexp::Atom(a, _)) => Ok(a),
        Some(other) => err(other.pos(), "expected keyword"),
        None => err(pos, "empty list"),
    }
}

fn arity(items: &[Sexp], pos: Pos, n: usize, form: &str) -> Result<(), ParseError> {
    if items.len() != n {
        return err(
            pos,
            format!(
                "`{form}` expects {} operand(s), got {}",
                n - 1,
                items.len() - 1
            ),
        );
    }
    Ok(())
}

fn looks_numeric(a: &str) -> bool {
    let t = a.strip_prefix('-').unwrap_or(a);
    t.starts_with(|c: char| c.is_ascii_digit())
}

fn parse_number(a: &str, pos: Pos) -> Result<Lit, ParseError> {
    if a.contains(['.', 'e', 'E']) {
        a.parse::<f64>()
            .map(Lit::Float)
            .or_else(|_| err(pos, format!("bad float literal `{a}`")))
    } else {
        a.parse::<i64>()
            .map(Lit::Int)
            .or_else(|_| err(pos, format!("bad integer literal `{a}`")))
    }
}

fn parse_expr(s: &Sexp) -> Result<Expr, ParseError> {
    let (items, pos) = match s {
        Sexp::Atom(a, p) => {
            if looks_numeric(a) {
                return parse_number(a, *p).map(Expr::Lit);
            }
            if is_ident(a) {
                return Ok(Expr::Var(a.clone()));
            }
            return err(*p, format!("unexpected token `{a}`"));
        }
        Sexp::List(items, p) => (items, *p),
    };
    let kw = head(items, pos)?;
    if let Some(op) = BinOp::from_keyword(kw) {
        arity(items, pos, 3, kw)?;
        return Ok(Expr::bin(
            op,
            parse_expr(&items[1])?,
            parse_expr(&items[2])?,
        ));
    }
    if let Some(op) = CmpOp::from_keyword(kw) {
        arity(items, pos, 3, kw)?;
        return Ok(Expr::cmp(
            op,
            parse_expr(&items[1])?,
            parse_expr(&items[2])?,
        ));
    }
    match kw {
        "load" => {
            arity(items, pos, 3, kw)?;
            Ok(Expr::load(
                ident(&items[1], "array name")?,
                parse_expr(&items[2])?,
            ))
        }
        "call" => {
            if items.len() < 2 {
                return err(pos, "`call` expects a function name");
            }
            let args = items[2..]
                .iter()
                .map(parse_expr)
                .collect::<Result<_, _>>()?;
            Ok(Expr::call(ident(&items[1], "function name")?, args))
        }
        "fbits" => {
            arity(items, pos, 2, kw)?;
            let bits = int_atom(&items[1], "bit pattern")?;
            Ok(Expr::float(f64::from_bits(bits as u64)))
        }
        "spec-enum" => {
            if items.len() < 4 {
                return err(
                    pos,
                    "`spec-enum` expects a label, an expression and at least one value",
                );
            }
            let values = items[3..]
                .iter()
                .map(|v| int_atom(v, "enum value"))
                .collect::<Result<Vec<_>, _>>()?;
            spec(items, ValueKind::Enum(values))
        }
        "spec-range" => {
            arity(items, pos, 5, kw)?;
            let lo = int_atom(&items[3], "range bound")?;
            let hi = int_atom(&items[4], "range bound")?;
            spec(items, ValueKind::Range { lo, hi })
        }
        "spec-generic" => {
            arity(items, pos, 3, kw)?;
            spec(items, ValueKind::Generic)
        }
        other => err(pos, format!("unknown expression form `{other}`")),
    }
}

fn spec(items: &[Sexp], kind: ValueKind) -> Result<Expr, ParseError> {
    let label = ident(&items[1], "spec label")?;
    let expr = parse_expr(&items[2])?;
    Ok(Expr::Spec(Box::new(SpecValue { label, kind, expr })))
}

fn parse_block(items: &[Sexp]) -> Result<Block, ParseError> {
    items.iter().map(parse_stmt).collect()
}

fn sub_block(s: &Sexp, kw: &str) -> Result<Block, ParseError> {
    match s {
        Sexp::List(items, pos) if head(items, *pos)? == kw => parse_block(&items[1..]),
        other => err(other.pos(), format!("expected `({kw} ...)`")),
    }
}

fn parse_stmt(s: &Sexp) -> Result<Stmt, ParseError> {
    let (items, pos) = match s {
        Sexp::List(items, p) => (items, *p),
        Sexp::Atom(a, p) => return err(*p, format!("expected statement, found `{a}`")),
    };
    let kw = head(items, pos)?;
    match kw {
        "let" | "set" => {
            arity(items, pos, 3, kw)?;
            let name = ident(&items[1], "variable name")?;
            let value = parse_expr(&items[2])?;
            Ok(if kw == "let" {
                Stmt::Let { name, value }
            } else {
                Stmt::Assign { name, value }
            })
        }
        "store" => {
            arity(items, pos, 4, kw)?;
            Ok(Stmt::store(
                ident(&items[1], "array name")?,
                parse_expr(&items[2])?,
                parse_expr(&items[3])?,
            ))
        }
        "if" => {
            if !(3..=4).contains(&items.len()) {
                return err(
                    pos,
                    "`if` expects a condition, `(then ...)` and optional `(else ...)`",
                );
            }
            let cond = parse_expr(&items[1])?;
            let then_body = sub_block(&items[2], "then")?;
            let else_body = match items.get(3) {
                Some(e) => sub_block(e, "else")?,
                None => Vec::new(),
            };
            Ok(Stmt::If {
                cond,
                then_body,
                else_body,
            })
        }
        "for" => {
            if items.len() < 5 {
                return err(pos, "`for` expects a variable, lo, hi and step");
            }
            Ok(Stmt::For {
                var: ident(&items[1], "loop variable")?,
                lo: parse_expr(&items[2])?,
                hi: parse_expr(&items[3])?,
                step: parse_expr(&items[4])?,
                body: parse_block(&items[5..])?,
            })
        }
        "while" => {
            if items.len() < 2 {
                return err(pos, "`while` expects a condition");
            }
            Ok(Stmt::While {
                cond: parse_expr(&items[1])?,
                body: parse_block(&items[2..])?,
            })
        }
        "return" => {
            arity(items, pos, 2, kw)?;
            Ok(Stmt::Return(parse_expr(&items[1])?))
        }
        "do" => {
            arity(items, pos, 2, kw)?;
            Ok(Stmt::Expr(parse_expr(&items[1])?))
        }
        "spec-assume" | "guard" | "assume" => {
            arity(items, pos, 3, kw)?;
            let label = ident(&items[1], "label")?;
            let pred = parse_expr(&items[2])?;
            Ok(match kw {
                "spec-assume" => Stmt::SpecAssume { label, pred },
                "guard" => Stmt::Guard { label, pred },
                _ => Stmt::Assume { label, pred },
            })
        }
        "spec-custom" => {
            arity(items, pos, 3, kw)?;
            Ok(Stmt::SpecCustom {
                label: ident(&items[1], "label")?,
                kind: ident(&items[2], "custom kind")?,
            })
        }
        "sample" => {
            if !(5..=6).contains(&items.len()) {
                return err(
                    pos,
                    "`sample` expects a label, a period, a sink and 1-2 expressions",
                );
            }
            let label = ident(&items[1], "label")?;
            let every_k = int_atom(&items[2], "sampling period")?;
            if every_k < 1 {
                return err(items[2].pos(), "sampling period must be positive");
            }
            let sink = match &items[3] {
                Sexp::Atom(a, _) if a == "freq" => SampleSink::Frequency,
                Sexp::Atom(a, _) if a == "pairs" => SampleSink::Pairs,
                Sexp::List(h, p) if head(h, *p)? == "hist" && h.len() == 3 => {
                    SampleSink::Histogram {
                        lo: int_atom(&h[1], "histogram bound")?,
                        hi: int_atom(&h[2], "histogram bound")?,
                    }
                }
                other => {
                    return err(
                        other.pos(),
                        "expected sink `freq`, `pairs` or `(hist LO HI)`",
                    )
                }
            };
            let value = parse_expr(&items[4])?;
            let output = items.get(5).map(parse_expr).transpose()?;
            Ok(Stmt::Sample(Sample {
                label,
                every_k: every_k as u64,
                sink,
                value,
                output,
            }))
        }
        other => err(pos, format!("unknown statement form `{other}`")),
    }
}

fn parse_extern(items: &[Sexp], pos: Pos) -> Result<Extern, ParseError> {
    if items.len() < 3 {
        return err(pos, "`extern` expects a name and a kind");
    }
    let name = ident(&items[1], "extern name")?;
    let ty = match &items[2] {
        Sexp::Atom(a, p) => {
            Type::from_keyword(a).map_or_else(|| err(*p, format!("unknown kind `{a}`")), Ok)?
        }
        other => return err(other.pos(), "expected extern kind"),
    };
    let len = match items.get(3) {
        None => None,
        Some(Sexp::Atom(a, p)) if ty.is_array() => match a.parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => return err(*p, format!("bad array length `{a}`")),
        },
        Some(other) => {
            return err(
                other.pos(),
                format!("initializer on external `{name}`: externs are declarations only"),
            )
        }
    };
    if items.len() > 4 {
        return err(
            items[4].pos(),
            format!("initializer on external `{name}`: externs are declarations only"),
        );
    }
    Ok(Extern { name, ty, len })
}

fn parse_fn(items: &[Sexp], pos: Pos) -> Result<Function, ParseError> {
    if items.len() < 5 {
        return err(
            pos,
            "`fn` expects a name, parameters, `->` and a return type",
        );
    }
    let name = ident(&items[1], "function name")?;
    let params = match &items[2] {
        Sexp::List(ps, _) => ps
            .iter()
            .map(|p| match p {
                Sexp::Atom(a, ppos) => {
                    let (n, t) = a
                        .split_once(':')
                        .ok_or(())
                        .or_else(|_| err(*ppos, "expected NAME:TYPE"))?;
                    let ty = Type::from_keyword(t)
                        .map_or_else(|| err(*ppos, format!("unknown type `{t}`")), Ok)?;
                    if !is_ident(n) {
                        return err(*ppos, format!("bad parameter name `{n}`"));
                    }
                    Ok(Param::new(n, ty))
                }
                other => err(other.pos(), "expected NAME:TYPE"),
            })
            .collect::<Result<Vec<_>, _>>()?,
        other => return err(other.pos(), "expected parameter list"),
    };
    match &items[3] {
        Sexp::Atom(a, _) if a == "->" => {}
        other => return err(other.pos(), "expected `->`"),
    }
    let ret = match &items[4] {
        Sexp::Atom(a, p) => {
            Type::from_keyword(a).map_or_else(|| err(*p, format!("unknown type `{a}`")), Ok)?
        }
        other => return err(other.pos(), "expected return type"),
    };
    let body = parse_block(&items[5..])?;
    Ok(Function {
        name,
        params,
        ret,
        body,
    })
}

/// Parses and validates a module from its textual form.
pub fn parse_module(text: &str) -> Result<HandlerModule, ParseError> {
    let forms = read_all(text)?;
    let mut module = HandlerModule::default();
    let items: &[Sexp] = match forms.as_slice() {
        [Sexp::List(items, pos)] if head(items, *pos)? == "module" => &items[1..],
        // A bare sequence of items is accepted as shorthand for `(module ...)`.
        items => items,
    };
    for item in items {
        let (parts, ipos) = match item {
            Sexp::List(parts, p) => (parts, *p),
            Sexp::Atom(a, p) => return err(*p, format!("unexpected `{a}` at module level")),
        };
        match head(parts, ipos)? {
            "extern" => module.externs.push(parse_extern(parts, ipos)?),
            "fn" => module.functions.push(parse_fn(parts, ipos)?),
            other => return err(ipos, format!("unknown module item `{other}`")),
        }
    }
    validate_module(&module).map_err(ParseError::Invalid)?;
    Ok(module)
}
