//! Reader for the subset of the MATPOWER case format used here.
//!
//! Recognized assignments: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`,
//! `mpc.branch`. Any other `mpc.*` field is skipped. Columns consumed:
//!
//! | matrix | columns (1-based)                                            |
//! |--------|--------------------------------------------------------------|
//! | bus    | 1 bus_i, 2 type, 3 Pd, 4 Qd, 5 Gs, 6 Bs, 10 baseKV           |
//! | gen    | 1 bus, 2 Pg, 4 Qmax, 5 Qmin, 6 Vg, 8 status                  |
//! | branch | 1 fbus, 2 tbus, 3 r, 4 x, 5 b, 9 ratio, 10 angle, 11 status  |
//!
//! MW/MVAr quantities are converted to per unit; `ratio = 0` means 1.0;
//! `angle` is in degrees. Out-of-service generators are dropped.

use std::collections::HashMap;

use super::{BranchRecord, BusKind, BusRecord, CaseError, Generator, NetworkCase};

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, message: impl Into<String>) -> CaseError {
        CaseError::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    /// Skips blanks and comments; newlines too when `newlines` is set.
    fn skip_space(&mut self, newlines: bool) {
        while let Some(c) = self.peek() {
            match c {
                '%' => self.skip_comment(),
                '\n' if !newlines => break,
                c if c.is_whitespace() => {
                    self.bump();
                }
                '.' => {
                    // MATPOWER line continuation "..."
                    let mut probe = self.chars.clone();
                    probe.next();
                    if probe.next() == Some('.') && probe.next() == Some('.') {
                        self.skip_comment();
                    } else {
                        break;
                    }
                }
                _ => break,
            }
        }
    }

    fn word(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '.' {
                out.push(c);
                self.bump();
            } else {
                break;
            }
        }
        out
    }

    fn number(&mut self) -> Result<f64, CaseError> {
        let (line, column) = (self.line, self.column);
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-') {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let value = match text.as_str() {
            "Inf" | "inf" => Ok(f64::INFINITY),
            "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
            _ => text.parse::<f64>(),
        };
        value.map_err(|_| CaseError::Syntax {
            line,
            column,
            message: format!("invalid number `{text}`"),
        })
    }

    fn expect(&mut self, want: char) -> Result<(), CaseError> {
        self.skip_space(true);
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.error(format!("expected `{want}`, found end of input"))),
        }
    }

    /// Reads `[ r11 r12 ...; r21 ... ]` after the opening bracket was seen.
    fn matrix(&mut self) -> Result<Vec<(usize, Vec<f64>)>, CaseError> {
        self.bump(); // '['
        let mut rows = Vec::new();
        let mut current = Vec::new();
        let mut row_line = self.line;
        loop {
            self.skip_space(false);
            match self.peek() {
                None => return Err(self.error("unterminated matrix")),
                Some(']') => {
                    self.bump();
                    if !current.is_empty() {
                        rows.push((row_line, std::mem::take(&mut current)));
                    }
                    return Ok(rows);
                }
                Some(';') | Some('\n') => {
                    self.bump();
                    if !current.is_empty() {
                        rows.push((row_line, std::mem::take(&mut current)));
                    }
                    row_line = self.line;
                }
                Some(',') => {
                    self.bump();
                }
                Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'I' | 'i') => {
                    if current.is_empty() {
                        row_line = self.line;
                    }
                    current.push(self.number()?);
                }
                Some(c) => return Err(self.error(format!("unexpected `{c}` in matrix"))),
            }
        }
    }

    fn skip_string(&mut self) -> Result<(), CaseError> {
        self.bump();
        while let Some(c) = self.bump() {
            if c == '\'' {
                return Ok(());
            }
            if c == '\n' {
                break;
            }
        }
        Err(self.error("unterminated string"))
    }
}

enum Value {
    Scalar(f64),
    Matrix(Vec<(usize, Vec<f64>)>),
    Other,
}

fn parse_assignments(text: &str) -> Result<(String, HashMap<String, (usize, Value)>), CaseError> {
    let mut cur = Cursor::new(text);
    let mut fields = HashMap::new();
    let mut name = String::new();
    loop {
        cur.skip_space(true);
        let Some(c) = cur.peek() else { break };
        if c == ';' {
            cur.bump();
            continue;
        }
        if !c.is_alphabetic() {
            return Err(cur.error(format!("unexpected `{c}`")));
        }
        let line = cur.line;
        let lhs = cur.word();
        if lhs == "function" {
            // function mpc = casename
            cur.skip_space(false);
            cur.word();
            cur.expect('=')?;
            cur.skip_space(false);
            name = cur.word();
            continue;
        }
        let Some(field) = lhs.strip_prefix("mpc.") else {
            return Err(CaseError::Syntax {
                line,
                column: 1,
                message: format!("unsupported statement `{lhs}`"),
            });
        };
        cur.expect('=')?;
        cur.skip_space(false);
        let value = match cur.peek() {
            Some('[') => Value::Matrix(cur.matrix()?),
            Some('{') => {
                // cell arrays (e.g. bus_name) are not consumed
                while let Some(c) = cur.bump() {
                    if c == '}' {
                        break;
                    }
                }
                Value::Other
            }
            Some('\'') => {
                cur.skip_string()?;
                Value::Other
            }
            Some(_) => Value::Scalar(cur.number()?),
            None => return Err(cur.error("missing value")),
        };
        fields.insert(field.to_string(), (line, value));
    }
    Ok((name, fields))
}

fn column(row: &[f64], idx: usize, line: usize, table: &str) -> Result<f64, CaseError> {
    row.get(idx).copied().ok_or_else(|| CaseError::Syntax {
        line,
        column: 1,
        message: format!("{table} row has {} columns, need at least {}", row.len(), idx + 1),
    })
}

fn matrix<'v>(
    fields: &'v HashMap<String, (usize, Value)>,
    key: &str,
) -> Result<&'v [(usize, Vec<f64>)], CaseError> {
    match fields.get(key) {
        Some((_, Value::Matrix(rows))) => Ok(rows),
        Some((line, _)) => Err(CaseError::Syntax {
            line: *line,
            column: 1,
            message: format!("mpc.{key} must be a matrix"),
        }),
        None => Err(CaseError::Semantic {
            record: "case".into(),
            message: format!("missing mpc.{key}"),
        }),
    }
}

/// Parses MATPOWER case text (see module docs for the consumed subset).
pub fn parse_matpower_case(text: &str) -> Result<NetworkCase, CaseError> {
    let (name, fields) = parse_assignments(text)?;
    let base_mva = match fields.get("baseMVA") {
        Some((_, Value::Scalar(v))) => *v,
        Some((line, _)) => {
            return Err(CaseError::Syntax {
                line: *line,
                column: 1,
                message: "mpc.baseMVA must be a scalar".into(),
            })
        }
        None => 100.0,
    };

    let mut buses = Vec::new();
    for (line, row) in matrix(&fields, "bus")? {
        let line = *line;
        let id = column(row, 0, line, "bus")?;
        let kind = match column(row, 1, line, "bus")? as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            other => {
                return Err(CaseError::Semantic {
                    record: format!("bus {id}"),
                    message: format!("unsupported bus type {other}"),
                })
            }
        };
        if id < 1.0 || id.fract() != 0.0 {
            return Err(CaseError::Semantic {
                record: format!("bus {id}"),
                message: "bus number must be a positive integer".into(),
            });
        }
        buses.push(BusRecord {
            id: id as usize,
            kind,
            load_p: column(row, 2, line, "bus")? / base_mva,
            load_q: column(row, 3, line, "bus")? / base_mva,
            shunt_g: column(row, 4, line, "bus")? / base_mva,
            shunt_b: column(row, 5, line, "bus")? / base_mva,
            base_kv: row.get(9).copied().unwrap_or(0.0),
        });
    }
    let index: HashMap<usize, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let lookup = |value: f64, record: String| {
        index
            .get(&(value as usize))
            .copied()
            .filter(|_| value >= 1.0 && value.fract() == 0.0)
            .ok_or_else(|| CaseError::Semantic {
                record,
                message: format!("references missing bus {value}"),
            })
    };

    let mut generators = Vec::new();
    for (k, (line, row)) in matrix(&fields, "gen")?.iter().enumerate() {
        let line = *line;
        let status = row.get(7).copied().unwrap_or(1.0);
        if status <= 0.0 {
            continue;
        }
        generators.push(Generator {
            bus: lookup(column(row, 0, line, "gen")?, format!("generator {}", k + 1))?,
            p_set: column(row, 1, line, "gen")? / base_mva,
            q_max: column(row, 3, line, "gen")? / base_mva,
            q_min: column(row, 4, line, "gen")? / base_mva,
            v_set: column(row, 5, line, "gen")?,
        });
    }

    let mut branches = Vec::new();
    for (k, (line, row)) in matrix(&fields, "branch")?.iter().enumerate() {
        let line = *line;
        let record = format!("branch {}", k + 1);
        let ratio = row.get(8).copied().unwrap_or(0.0);
        branches.push(BranchRecord {
            from_bus: lookup(column(row, 0, line, "branch")?, record.clone())?,
            to_bus: lookup(column(row, 1, line, "branch")?, record)?,
            r: column(row, 2, line, "branch")?,
            x: column(row, 3, line, "branch")?,
            b_charging: column(row, 4, line, "branch")?,
            tap_ratio: if ratio == 0.0 { 1.0 } else { ratio },
            phase_shift: row.get(9).copied().unwrap_or(0.0).to_radians(),
            in_service: row.get(10).copied().unwrap_or(1.0) > 0.0,
        });
    }
    NetworkCase::new(name, base_mva, buses, branches, generators)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::shipped_case;

    const TWO_BUS: &str = "function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1 0 12.66 1 1.1 0.9;
    2 1 50 10 0 0 1 1 0 12.66 1 1.1 0.9;  % load bus
];
mpc.gen = [1 0 0 100 -100 1 100 1 200 0];
mpc.branch = [
    1, 2, 0, 0.1, 0, 0, 0, 0, 0, 0, 1;
];
";

    #[test]
    fn parses_two_bus() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "two");
        assert_eq!(case.n_bus(), 2);
        assert_eq!(case.buses[1].load_p, 0.5);
        assert_eq!(case.buses[1].load_q, 0.1);
        assert_eq!(case.branches[0].x, 0.1);
        assert_eq!(case.branches[0].tap_ratio, 1.0);
        assert_eq!(case.generators[0].q_max, 1.0);
    }

    #[test]
    fn bad_number_has_location() {
        let text = TWO_BUS.replace("2 1 50 10", "2 1 5x0 10");
        match parse_matpower_case(&text).unwrap_err() {
            CaseError::Syntax { line, column, .. } => {
                assert_eq!(line, 5);
                assert_eq!(column, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_slack_is_semantic() {
        let text = TWO_BUS.replace("1 3 0  0", "1 1 0  0");
        assert!(matches!(
            parse_matpower_case(&text).unwrap_err(),
            CaseError::Semantic { .. }
        ));
    }

    #[test]
    fn shipped_matpower_files_agree_with_json() {
        for (name, text) in [
            ("case33bw", include_str!("../../data/case33bw.m")),
            ("case39", include_str!("../../data/case39.m")),
        ] {
            let from_m = parse_matpower_case(text).unwrap();
            let from_json = shipped_case(name).unwrap();
            assert_eq!(from_m.n_bus(), from_json.n_bus());
            assert_eq!(from_m.branches.len(), from_json.branches.len());
            assert_eq!(from_m.generators.len(), from_json.generators.len());
            for (a, b) in from_m.buses.iter().zip(&from_json.buses) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.kind, b.kind);
                assert!((a.load_p - b.load_p).abs() < 1e-9);
                assert!((a.load_q - b.load_q).abs() < 1e-9);
            }
            for (a, b) in from_m.branches.iter().zip(&from_json.branches) {
                assert_eq!((a.from_bus, a.to_bus), (b.from_bus, b.to_bus));
                assert!((a.x - b.x).abs() < 1e-9 && (a.r - b.r).abs() < 1e-9);
                assert!((a.tap_ratio - b.tap_ratio).abs() < 1e-9);
                assert_eq!(a.in_service, b.in_service);
            }
        }
    }
}
