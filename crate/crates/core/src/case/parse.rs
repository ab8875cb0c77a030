use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, CaseError, CostCurve, Generator, NetworkCase, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Number of equal-width pieces used to linearize polynomial costs of
    /// degree two or more.
    pub polynomial_segments: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            polynomial_segments: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Eq,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Semi,
    Comma,
    Newline,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, CaseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let push = |out: &mut Vec<Token>, tok| {
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            })
        };
        match c {
            '\n' => {
                push(&mut out, Tok::Newline);
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '%' | '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '=' => push(&mut out, Tok::Eq),
            '[' => push(&mut out, Tok::LBracket),
            ']' => push(&mut out, Tok::RBracket),
            '{' => push(&mut out, Tok::LBrace),
            '}' => push(&mut out, Tok::RBrace),
            ';' => push(&mut out, Tok::Semi),
            ',' => push(&mut out, Tok::Comma),
            '\'' | '"' => {
                let quote = c;
                let mut j = i + 1;
                while j < chars.len() && chars[j] != quote && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != quote {
                    return Err(syntax(tl, tc, "unterminated string"));
                }
                let s: String = chars[i + 1..j].iter().collect();
                push(&mut out, Tok::Str(s));
                col += j + 1 - i;
                i = j + 1;
                continue;
            }
            _ if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let mut j = i;
                if chars[j] == '-' || chars[j] == '+' {
                    j += 1;
                }
                while j < chars.len()
                    && (chars[j].is_ascii_alphanumeric()
                        || chars[j] == '.'
                        || ((chars[j] == '-' || chars[j] == '+')
                            && matches!(chars[j - 1], 'e' | 'E')))
                {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| syntax(tl, tc, format!("invalid number `{s}`")))?;
                push(&mut out, Tok::Num(v));
                col += j - i;
                i = j;
                continue;
            }
            _ if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len()
                    && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '.')
                {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let tok = match s.to_ascii_lowercase().as_str() {
                    "inf" => Tok::Num(f64::INFINITY),
                    "nan" => Tok::Num(f64::NAN),
                    _ => Tok::Ident(s),
                };
                push(&mut out, tok);
                col += j - i;
                i = j;
                continue;
            }
            _ => return Err(syntax(tl, tc, format!("unexpected character `{c}`"))),
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

enum Value {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Other,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eof_error(&self) -> CaseError {
        let (line, column) = self
            .toks
            .last()
            .map(|t| (t.line, t.column))
            .unwrap_or((1, 1));
        syntax(line, column, "unexpected end of input")
    }

    fn skip_separators(&mut self) {
        while matches!(
            self.peek().map(|t| &t.tok),
            Some(Tok::Newline | Tok::Semi | Tok::Comma)
        ) {
            self.pos += 1;
        }
    }

    fn skip_to_line_end(&mut self) {
        while let Some(t) = self.peek() {
            if matches!(t.tok, Tok::Newline | Tok::Semi) {
                break;
            }
            self.pos += 1;
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>, CaseError> {
        let mut rows = Vec::new();
        let mut row = Vec::new();
        loop {
            let t = self.next().ok_or_else(|| self.eof_error())?;
            match t.tok {
                Tok::Num(v) => row.push(v),
                Tok::Comma => {}
                Tok::Semi | Tok::Newline => {
                    if !row.is_empty() {
                        rows.push(std::mem::take(&mut row));
                    }
                }
                Tok::RBracket => {
                    if !row.is_empty() {
                        rows.push(row);
                    }
                    return Ok(rows);
                }
                other => {
                    return Err(syntax(
                        t.line,
                        t.column,
                        format!("unexpected {} inside matrix", describe(&other)),
                    ))
                }
            }
        }
    }

    fn cell(&mut self) -> Result<(), CaseError> {
        let mut depth = 1;
        while depth > 0 {
            let t = self.next().ok_or_else(|| self.eof_error())?;
            match t.tok {
                Tok::LBrace => depth += 1,
                Tok::RBrace => depth -= 1,
                _ => {}
            }
        }
        Ok(())
    }

    fn value(&mut self) -> Result<Value, CaseError> {
        let t = self.next().ok_or_else(|| self.eof_error())?;
        match t.tok {
            Tok::Num(v) => Ok(Value::Scalar(v)),
            Tok::Str(_) => Ok(Value::Other),
            Tok::LBracket => Ok(Value::Matrix(self.matrix()?)),
            Tok::LBrace => {
                self.cell()?;
                Ok(Value::Other)
            }
            Tok::Ident(_) => {
                self.skip_to_line_end();
                Ok(Value::Other)
            }
            other => Err(syntax(
                t.line,
                t.column,
                format!("expected a value, found {}", describe(&other)),
            )),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Num(v) => format!("number {v}"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::Eq => "`=`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::Semi => "`;`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Newline => "end of line".into(),
    }
}

/// Parses a MATPOWER case with default options.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    parse_case_with(text, &ParseOptions::default())
}

pub fn parse_case_with(text: &str, opts: &ParseOptions) -> Result<NetworkCase, CaseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut name = String::from("case");
    let mut base_power = 100.0;
    let mut tables: HashMap<String, Vec<Vec<f64>>> = HashMap::new();

    loop {
        p.skip_separators();
        let Some(t) = p.next() else { break };
        let ident = match t.tok {
            Tok::Ident(s) => s,
            other => {
                return Err(syntax(
                    t.line,
                    t.column,
                    format!("expected a statement, found {}", describe(&other)),
                ))
            }
        };
        if ident == "function" {
            // function mpc = name
            let mut last = None;
            while let Some(t) = p.peek() {
                if matches!(t.tok, Tok::Newline | Tok::Semi) {
                    break;
                }
                if let Tok::Ident(s) = &t.tok {
                    last = Some(s.clone());
                }
                p.pos += 1;
            }
            if let Some(n) = last {
                name = n;
            }
            continue;
        }
        if !matches!(p.peek().map(|t| &t.tok), Some(Tok::Eq)) {
            p.skip_to_line_end();
            continue;
        }
        p.pos += 1;
        let field = ident.rsplit('.').next().unwrap_or(&ident).to_string();
        match p.value()? {
            Value::Scalar(v) if field == "baseMVA" => base_power = v,
            Value::Matrix(rows) => {
                tables.insert(field, rows);
            }
            _ => {}
        }
    }

    let take = |tables: &mut HashMap<String, Vec<Vec<f64>>>, key: &'static str| {
        tables.remove(key).ok_or(CaseError::MissingTable(key))
    };
    let bus_rows = take(&mut tables, "bus")?;
    let gen_rows = take(&mut tables, "gen")?;
    let branch_rows = take(&mut tables, "branch")?;
    let cost_rows = take(&mut tables, "gencost")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut seen = HashSet::new();
    for (r, row) in bus_rows.into_iter().enumerate() {
        if row.len() < 3 {
            return Err(bad_row("bus", r, "expected at least 3 columns"));
        }
        let id = bus_id(row[0]).ok_or_else(|| bad_row("bus", r, "bus id must be a positive integer"))?;
        if !seen.insert(id) {
            return Err(CaseError::DuplicateBus(id));
        }
        buses.push(Bus {
            id,
            kind: BusKind::from_code(row[1]),
            demand: row[2],
            voltage_level: row.get(9).copied().unwrap_or(0.0),
            coords: None,
            raw: row,
        });
    }

    let bus_ref = |table: &'static str, r: usize, v: f64| -> Result<u32, CaseError> {
        let id = bus_id(v).ok_or_else(|| bad_row(table, r, "bus reference must be a positive integer"))?;
        if seen.contains(&id) {
            Ok(id)
        } else {
            Err(CaseError::DanglingBus {
                table,
                row: r + 1,
                bus: id,
            })
        }
    };

    if cost_rows.len() < gen_rows.len() {
        return Err(CaseError::BadRow {
            table: "gencost",
            row: cost_rows.len() + 1,
            message: format!(
                "{} cost rows for {} generators",
                cost_rows.len(),
                gen_rows.len()
            ),
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (r, (row, cost_row)) in gen_rows.into_iter().zip(cost_rows).enumerate() {
        if row.len() < 10 {
            return Err(bad_row("gen", r, "expected at least 10 columns"));
        }
        let bus = bus_ref("gen", r, row[0])?;
        let (p_min, p_max) = (row[9], row[8]);
        let cost = parse_cost(&cost_row, r, p_min, p_max, opts)?;
        generators.push(Generator {
            id: (r + 1) as u32,
            bus,
            p_min,
            p_max,
            cost,
            in_service: row[7] > 0.0,
            wind_farm: None,
            raw: row,
            raw_cost: cost_row,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (r, row) in branch_rows.into_iter().enumerate() {
        if row.len() < 4 {
            return Err(bad_row("branch", r, "expected at least 4 columns"));
        }
        let from_bus = bus_ref("branch", r, row[0])?;
        let to_bus = bus_ref("branch", r, row[1])?;
        let rate = row.get(5).copied().unwrap_or(0.0);
        branches.push(Branch {
            id: (r + 1) as u32,
            from_bus,
            to_bus,
            reactance: row[3],
            rating: (rate > 0.0).then_some(rate),
            in_service: row.get(10).map_or(true, |s| *s > 0.0),
            raw: row,
        });
    }

    Ok(NetworkCase {
        name,
        base_power,
        buses,
        generators,
        branches,
    })
}

fn bus_id(v: f64) -> Option<u32> {
    (v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64).then_some(v as u32)
}

fn bad_row(table: &'static str, r: usize, message: &str) -> CaseError {
    CaseError::BadRow {
        table,
        row: r + 1,
        message: message.to_string(),
    }
}

fn parse_cost(
    row: &[f64],
    r: usize,
    p_min: f64,
    p_max: f64,
    opts: &ParseOptions,
) -> Result<CostCurve, CaseError> {
    if row.len() < 4 {
        return Err(bad_row("gencost", r, "expected at least 4 columns"));
    }
    let n = row[3];
    if n.fract() != 0.0 || n < 0.0 {
        return Err(bad_row("gencost", r, "point/coefficient count must be a non-negative integer"));
    }
    let n = n as usize;
    match row[0] as i64 {
        1 => {
            if row.len() < 4 + 2 * n || n < 2 {
                return Err(bad_row("gencost", r, "piecewise cost needs at least 2 points"));
            }
            let points: Vec<(f64, f64)> = (0..n)
                .map(|k| (row[4 + 2 * k], row[5 + 2 * k]))
                .collect();
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(bad_row("gencost", r, "piecewise breakpoints must increase"));
            }
            Ok(CostCurve::Piecewise { points })
        }
        2 => {
            if row.len() < 4 + n {
                return Err(bad_row("gencost", r, "missing polynomial coefficients"));
            }
            // Highest order first.
            let coeffs = &row[4..4 + n];
            let eval = |p: f64| coeffs.iter().fold(0.0, |acc, c| acc * p + c);
            match n {
                0 => Ok(CostCurve::zero()),
                1 => Ok(CostCurve::Linear {
                    slope: 0.0,
                    offset: coeffs[0],
                }),
                2 => Ok(CostCurve::Linear {
                    slope: coeffs[0],
                    offset: coeffs[1],
                }),
                _ => {
                    let k = opts.polynomial_segments.max(1);
                    if !(p_max > p_min) {
                        // Degenerate range: keep the tangent at p_min.
                        let deriv = coeffs
                            .iter()
                            .take(n - 1)
                            .enumerate()
                            .fold(0.0, |acc, (i, c)| acc * p_min + c * (n - 1 - i) as f64);
                        return Ok(CostCurve::Linear {
                            slope: deriv,
                            offset: eval(p_min) - deriv * p_min,
                        });
                    }
                    let points = (0..=k)
                        .map(|i| {
                            let p = if i == k {
                                p_max
                            } else {
                                p_min + (p_max - p_min) * i as f64 / k as f64
                            };
                            (p, eval(p))
                        })
                        .collect();
                    Ok(CostCurve::Piecewise { points })
                }
            }
        }
        m => Err(bad_row("gencost", r, &format!("unsupported cost model {m}"))),
    }
}

fn set(raw: &mut Vec<f64>, idx: usize, v: f64) {
    if raw.len() <= idx {
        raw.resize(idx + 1, 0.0);
    }
    raw[idx] = v;
}

fn write_row(out: &mut String, row: &[f64]) {
    out.push('\t');
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        if v.is_infinite() {
            out.push_str(if *v > 0.0 { "Inf" } else { "-Inf" });
        } else if v.is_nan() {
            out.push_str("NaN");
        } else {
            let _ = write!(out, "{v}");
        }
    }
    out.push_str(";\n");
}

/// Writes the case back in MATPOWER text form.
pub fn serialize_case(case: &NetworkCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", case.name);
    out.push_str("mpc.version = '2';\n");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_power);

    out.push_str("\nmpc.bus = [\n");
    for b in &case.buses {
        let mut raw = b.raw.clone();
        set(&mut raw, 0, b.id as f64);
        set(&mut raw, 1, b.kind.code());
        set(&mut raw, 2, b.demand);
        if raw.len() > 9 || b.voltage_level != 0.0 {
            set(&mut raw, 9, b.voltage_level);
        }
        write_row(&mut out, &raw);
    }
    out.push_str("];\n\nmpc.gen = [\n");
    for g in &case.generators {
        let mut raw = g.raw.clone();
        set(&mut raw, 0, g.bus as f64);
        set(&mut raw, 7, if g.in_service { 1.0 } else { 0.0 });
        set(&mut raw, 8, g.p_max);
        set(&mut raw, 9, g.p_min);
        write_row(&mut out, &raw);
    }
    out.push_str("];\n\nmpc.branch = [\n");
    for br in &case.branches {
        let mut raw = br.raw.clone();
        set(&mut raw, 0, br.from_bus as f64);
        set(&mut raw, 1, br.to_bus as f64);
        set(&mut raw, 3, br.reactance);
        if raw.len() > 5 || br.rating.is_some() {
            set(&mut raw, 5, br.rating.unwrap_or(0.0));
        }
        if raw.len() > 10 || !br.in_service {
            set(&mut raw, 10, if br.in_service { 1.0 } else { 0.0 });
        }
        write_row(&mut out, &raw);
    }
    out.push_str("];\n\nmpc.gencost = [\n");
    for g in &case.generators {
        let startup = g.raw_cost.get(1).copied().unwrap_or(0.0);
        let shutdown = g.raw_cost.get(2).copied().unwrap_or(0.0);
        let row: Vec<f64> = match &g.cost {
            CostCurve::Linear { slope, offset } => vec![2.0, startup, shutdown, 2.0, *slope, *offset],
            CostCurve::Piecewise { points } => {
                let mut row = vec![1.0, startup, shutdown, points.len() as f64];
                for (p, c) in points {
                    row.push(*p);
                    row.push(*c);
                }
                row
            }
        };
        write_row(&mut out, &row);
    }
    out.push_str("];\n");
    out
}

/// Reads a `bus_id,x,y` coordinates sidecar.
pub fn load_coordinates(text: &str) -> Result<HashMap<u32, Point>, CaseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CaseError::Coordinates {
            line,
            message: e.to_string(),
        })?;
        if rec.len() < 3 {
            return Err(CaseError::Coordinates {
                line,
                message: "expected bus_id,x,y".into(),
            });
        }
        let field = |k: usize| -> Result<f64, CaseError> {
            rec[k].parse::<f64>().map_err(|_| CaseError::Coordinates {
                line,
                message: format!("invalid number `{}`", &rec[k]),
            })
        };
        let id = bus_id(field(0)?).ok_or_else(|| CaseError::Coordinates {
            line,
            message: "bus id must be a positive integer".into(),
        })?;
        let p = Point::new(field(1)?, field(2)?);
        if !p.is_finite() {
            return Err(CaseError::Coordinates {
                line,
                message: "coordinates must be finite".into(),
            });
        }
        out.insert(id, p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CASE3: &str = r#"
function mpc = case3
mpc.version = '2';
%% system MVA base
mpc.baseMVA = 100;

%% bus data
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	400	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	220	1	1.1	0.9;
	3	1	40	0	0	0	1	1	0	220	1	1.1	0.9;
];

mpc.gen = [
	1	0	0	300	-300	1	100	1	200	0	0	0	0	0	0	0	0	0	0	0	0;
];

mpc.branch = [
	1	2	0.01	0.1	0	100	100	100	0	0	1	-360	360;
	2	3	0.01	0.1	0	0	0	0	0	0	1	-360	360;
];

mpc.gencost = [
	2	0	0	2	20	0;
];

mpc.bus_name = {
	'ONE';
	'TWO';
	'THREE';
};
"#;

    #[test]
    fn parses_minimal_case() {
        let case = parse_case(CASE3).unwrap();
        assert_eq!(case.name, "case3");
        assert_eq!(case.base_power, 100.0);
        assert_eq!(case.buses.len(), 3);
        assert_eq!(case.generators.len(), 1);
        assert_eq!(case.branches.len(), 2);
        assert_eq!(case.buses[0].kind, BusKind::Reference);
        assert_eq!(case.buses[1].voltage_level, 220.0);
        assert_eq!(case.branches[0].rating, Some(100.0));
        assert_eq!(case.branches[1].rating, None);
        assert_eq!(case.generators[0].p_max, 200.0);
        assert_eq!(
            case.generators[0].cost,
            CostCurve::Linear {
                slope: 20.0,
                offset: 0.0
            }
        );
    }

    #[test]
    fn dangling_bus_reference_is_reported() {
        let text = CASE3.replace("2\t3\t0.01", "2\t99\t0.01");
        assert_eq!(
            parse_case(&text),
            Err(CaseError::DanglingBus {
                table: "branch",
                row: 2,
                bus: 99
            })
        );
    }

    #[test]
    fn syntax_error_has_position() {
        let text = CASE3.replace("1\t2\t0.01", "1\t2\t0.0@1");
        match parse_case(&text) {
            Err(CaseError::Syntax { line, column, .. }) => {
                assert_eq!(line, 20);
                assert_eq!(column, 9);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn missing_table() {
        let cut = CASE3.find("mpc.gencost").unwrap();
        assert_eq!(
            parse_case(&CASE3[..cut]),
            Err(CaseError::MissingTable("gencost"))
        );
    }

    #[test]
    fn out_of_service_branch_is_kept() {
        let text = CASE3.replace("0\t0\t1\t-360\t360;\n];\n\nmpc.gencost", "0\t0\t0\t-360\t360;\n];\n\nmpc.gencost");
        let case = parse_case(&text).unwrap();
        assert_eq!(case.branches.len(), 2);
        assert!(!case.branches[1].in_service);
    }

    #[test]
    fn quadratic_cost_becomes_convex_piecewise() {
        let text = CASE3.replace("2\t0\t0\t2\t20\t0;", "2\t0\t0\t3\t0.01\t20\t5;");
        let case = parse_case_with(&text, &ParseOptions { polynomial_segments: 4 }).unwrap();
        let cost = &case.generators[0].cost;
        let CostCurve::Piecewise { points } = cost else {
            panic!("expected piecewise cost")
        };
        assert_eq!(points.len(), 5);
        assert_eq!(points[0], (0.0, 5.0));
        assert_eq!(points[4], (200.0, 0.01 * 200.0 * 200.0 + 20.0 * 200.0 + 5.0));
        assert!(cost.is_convex());
    }

    #[test]
    fn serialize_round_trip() {
        let case = parse_case(CASE3).unwrap();
        let again = parse_case(&serialize_case(&case)).unwrap();
        assert_eq!(case, again);
    }

    #[test]
    fn coordinates_sidecar() {
        let coords = load_coordinates("bus_id,x,y\n1, 0.5, 2\n3,1,1\n").unwrap();
        assert_eq!(coords[&1], Point::new(0.5, 2.0));
        assert!(load_coordinates("bus_id,x,y\n1,a,2\n").is_err());
    }
}
