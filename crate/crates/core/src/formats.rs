//! Plain-text file formats: quadrature CSV, characteristic-sample CSV and
//! Wigner grids. Floats are written in shortest round-trip form, so every
//! file parses back to the exact values that produced it.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::dynamics::QuadratureRecord;
use crate::error::{Error, Result};
use crate::reconstruct::{CharSample, GridGeometry, WignerGrid, WIGNER_CONVENTION};
use crate::C64;

pub const QUADRATURE_HEADER: &str = "t,x_mean,y_mean,x_var,y_var,re_a,im_a,eta,noisy";
pub const CHAR_HEADER: &str = "re_lambda,im_lambda,re_chi,im_chi,weight,source";

/// Shortest decimal string that parses back to `x`. Plain notation for
/// moderate magnitudes, exponent notation otherwise.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || x.is_nan() || x.is_infinite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: bad {what} `{field}`: {e}")))
}

/// Ordered `# key=value` preamble.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preamble(pub Vec<(String, String)>);

impl Preamble {
    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.0.push((key.to_string(), value.into()));
    }

    /// First value recorded under `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse(format!("missing `# {key}=` metadata")))
    }

    fn write(&self, out: &mut String) {
        for (k, v) in &self.0 {
            let v = v.replace(['\n', '\r'], " ");
            let _ = writeln!(out, "# {k}={v}");
        }
    }

    fn parse_line(&mut self, line: &str) {
        let body = line.trim_start_matches('#').trim();
        match body.split_once('=') {
            Some((k, v)) => self.push(k.trim(), v.trim()),
            None if !body.is_empty() => self.push(body, ""),
            None => {}
        }
    }
}

/// A parsed quadrature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureFile {
    pub preamble: Preamble,
    pub eta: f64,
    pub records: Vec<QuadratureRecord>,
}

pub fn write_quadrature_csv(preamble: &Preamble, eta: f64, records: &[QuadratureRecord]) -> String {
    let mut out = String::new();
    preamble.write(&mut out);
    out.push_str(QUADRATURE_HEADER);
    out.push('\n');
    for r in records {
        let cols = [r.t, r.x_mean, r.y_mean, r.x_var, r.y_var, r.a_mean.re, r.a_mean.im, eta];
        let joined: Vec<String> = cols.iter().map(|x| fmt_f64(*x)).collect();
        let _ = writeln!(out, "{},{}", joined.join(","), u8::from(r.noisy));
    }
    out
}

/// Parses a quadrature CSV. Shot counts of noisy rows come from the
/// `# shots=` metadata line when present.
pub fn parse_quadrature_csv(text: &str) -> Result<QuadratureFile> {
    let mut preamble = Preamble::default();
    let mut header_seen = false;
    let mut records = Vec::new();
    let mut eta = None;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if header_seen {
                return Err(Error::Parse(format!("line {lineno}: metadata after header")));
            }
            preamble.parse_line(line);
            continue;
        }
        if !header_seen {
            if line.trim() != QUADRATURE_HEADER {
                return Err(Error::Parse(format!("line {lineno}: expected header `{QUADRATURE_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        rows.push((lineno, line));
    }
    if !header_seen {
        return Err(Error::Parse("missing quadrature CSV header".into()));
    }
    let shots = match preamble.get("shots") {
        None | Some("none") => None,
        Some(s) => Some(
            s.parse::<u64>()
                .map_err(|e| Error::Parse(format!("bad shots metadata `{s}`: {e}")))?,
        ),
    };
    for (lineno, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Parse(format!("line {lineno}: expected 9 columns, found {}", fields.len())));
        }
        let names = ["t", "x_mean", "y_mean", "x_var", "y_var", "re_a", "im_a", "eta"];
        let mut v = [0.0; 8];
        for (slot, (field, name)) in v.iter_mut().zip(fields.iter().zip(names)) {
            *slot = parse_f64(field, name, lineno)?;
        }
        let noisy = match fields[8].trim() {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(Error::Parse(format!("line {lineno}: bad noisy flag `{other}`"))),
        };
        match eta {
            None => eta = Some(v[7]),
            Some(e) if e != v[7] => {
                return Err(Error::Parse(format!("line {lineno}: eta changes within one file")));
            }
            _ => {}
        }
        records.push(QuadratureRecord {
            t: v[0],
            x_mean: v[1],
            y_mean: v[2],
            x_var: v[3],
            y_var: v[4],
            a_mean: C64::new(v[5], v[6]),
            shots: if noisy { shots } else { None },
            noisy,
        });
    }
    let eta = match (eta, preamble.get("eta")) {
        (Some(e), _) => e,
        (None, Some(e)) => parse_f64(e, "eta", 0)?,
        (None, None) => return Err(Error::EmptyInput("quadrature rows")),
    };
    Ok(QuadratureFile { preamble, eta, records })
}

fn clean_source(source: &str) -> String {
    source.replace([',', '\n', '\r'], ";")
}

pub fn write_char_csv(preamble: &Preamble, samples: &[CharSample]) -> String {
    let mut out = String::new();
    preamble.write(&mut out);
    out.push_str(CHAR_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(s.lambda.re),
            fmt_f64(s.lambda.im),
            fmt_f64(s.chi_hat.re),
            fmt_f64(s.chi_hat.im),
            fmt_f64(s.weight),
            clean_source(&s.source)
        );
    }
    out
}

pub fn parse_char_csv(text: &str) -> Result<(Preamble, Vec<CharSample>)> {
    let mut preamble = Preamble::default();
    let mut header_seen = false;
    let mut samples = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') && !header_seen {
            preamble.parse_line(line);
            continue;
        }
        if !header_seen {
            if line.trim() != CHAR_HEADER {
                return Err(Error::Parse(format!("line {lineno}: expected header `{CHAR_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.splitn(6, ',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!("line {lineno}: expected 6 columns")));
        }
        samples.push(CharSample {
            lambda: C64::new(parse_f64(fields[0], "re_lambda", lineno)?, parse_f64(fields[1], "im_lambda", lineno)?),
            chi_hat: C64::new(parse_f64(fields[2], "re_chi", lineno)?, parse_f64(fields[3], "im_chi", lineno)?),
            weight: parse_f64(fields[4], "weight", lineno)?,
            source: fields[5].to_string(),
        });
    }
    if !header_seen {
        return Err(Error::Parse("missing characteristic-sample CSV header".into()));
    }
    Ok((preamble, samples))
}

/// Four header lines then `n` rows of `n` values; row `i` holds
/// `W(center + x_i + i y_j)` for `j = 0..n`, so rows step along the real axis.
pub fn write_wigner_grid(grid: &WignerGrid) -> String {
    let g = grid.geometry();
    let mut out = String::new();
    let _ = writeln!(out, "# convention={}", grid.convention_tag());
    let _ = writeln!(out, "# center={},{}", fmt_f64(g.center().re), fmt_f64(g.center().im));
    let _ = writeln!(out, "# half_width={}", fmt_f64(g.half_width()));
    let _ = writeln!(out, "# n={}", g.n());
    for i in 0..g.n() {
        let row: Vec<String> = (0..g.n()).map(|j| fmt_f64(grid.values()[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_wigner_grid(text: &str) -> Result<WignerGrid> {
    let mut preamble = Preamble::default();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            preamble.parse_line(line);
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|f| parse_f64(f, "Wigner value", k + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let convention = preamble.require("convention")?;
    if convention != WIGNER_CONVENTION {
        return Err(Error::Parse(format!("unsupported Wigner convention `{convention}`")));
    }
    let center = preamble.require("center")?;
    let (re, im) = center
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("bad center `{center}`")))?;
    let center = C64::new(parse_f64(re, "center", 0)?, parse_f64(im, "center", 0)?);
    let half_width = parse_f64(preamble.require("half_width")?, "half_width", 0)?;
    let n_text = preamble.require("n")?;
    let n = n_text
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("bad n `{n_text}`: {e}")))?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!("expected {n} rows of {n} values")));
    }
    let geometry = GridGeometry::new(center, half_width, n)?;
    WignerGrid::new(geometry, DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        for &x in &[0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, -2.5e-7, 6.02214076e23, f64::MAX, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x} -> {s}");
        }
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(1e-20), "1e-20");
    }

    #[test]
    fn quadrature_round_trip() {
        let records = vec![
            QuadratureRecord::from_measurement(0.0, 1.0 / 3.0, -2e-9, 0.5, 0.5000000000000001, None),
            QuadratureRecord {
                t: 0.1,
                x_mean: 0.7,
                y_mean: 0.2,
                x_var: 0.6,
                y_var: 0.41,
                a_mean: C64::new(0.7, 0.2) / std::f64::consts::SQRT_2,
                shots: Some(1000),
                noisy: true,
            },
        ];
        let mut pre = Preamble::default();
        pre.push("frame", "rotating_at_omega");
        pre.push("shots", "1000");
        let text = write_quadrature_csv(&pre, 0.3, &records);
        assert!(text.starts_with("# frame=rotating_at_omega\n# shots=1000\nt,x_mean"));
        let parsed = parse_quadrature_csv(&text).unwrap();
        assert_eq!(parsed.records, records);
        assert_eq!(parsed.eta, 0.3);
        assert_eq!(parsed.preamble, pre);
        assert!(parse_quadrature_csv("t,x\n1,2\n").is_err());
    }

    #[test]
    fn char_round_trip() {
        let samples = vec![
            CharSample {
                lambda: C64::new(0.1, -0.2),
                chi_hat: C64::new(0.9, 1e-17),
                weight: 1.0,
                source: "eta=0.1#3".into(),
            },
            CharSample {
                lambda: C64::new(0.0, 0.0),
                chi_hat: C64::new(1.0, 0.0),
                weight: 2.5e6,
                source: "origin[4]".into(),
            },
        ];
        let text = write_char_csv(&Preamble::default(), &samples);
        let (_, parsed) = parse_char_csv(&text).unwrap();
        assert_eq!(parsed, samples);
    }

    #[test]
    fn wigner_round_trip() {
        let geom = GridGeometry::new(C64::new(0.5, -0.25), 1.0, 3).unwrap();
        let grid = WignerGrid::new(geom, DMatrix::from_fn(3, 3, |i, j| (i as f64 - 1.3 * j as f64) / 7.0)).unwrap();
        let text = write_wigner_grid(&grid);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# convention="));
        assert_eq!(lines.next().unwrap(), "# center=0.5,-0.25");
        assert_eq!(lines.next().unwrap(), "# half_width=1");
        assert_eq!(lines.next().unwrap(), "# n=3");
        assert_eq!(parse_wigner_grid(&text).unwrap(), grid);
    }
}
