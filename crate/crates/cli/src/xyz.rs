//! Multi-frame XYZ reading and writing.

use std::fmt::Write as _;

use hessnet_core::molecule::{atomic_number, element_symbol, Molecule};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct XyzError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> XyzError {
    XyzError {
        line,
        message: message.into(),
    }
}

/// One molecule per frame, with comment lines kept alongside.
pub fn parse_xyz_with_comments(text: &str) -> Result<Vec<(Molecule, String)>, XyzError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| err(count_line, format!("expected an atom count, found '{}'", lines[i].trim())))?;
        let comment = lines.get(i + 1).map(|s| s.trim().to_string()).unwrap_or_default();
        let body = i + 2;
        if lines.len() < body + n {
            return Err(err(
                lines.len().max(count_line),
                format!("frame declares {n} atoms but only {} lines follow", lines.len().saturating_sub(body)),
            ));
        }
        let mut z = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        for (k, raw) in lines[body..body + n].iter().enumerate() {
            let line_no = body + k + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(err(line_no, format!("expected 'Symbol x y z', found '{}'", raw.trim())));
            }
            let zi = atomic_number(fields[0]).ok_or_else(|| err(line_no, format!("unknown element symbol '{}'", fields[0])))?;
            let mut p = [0.0; 3];
            for (c, f) in fields[1..4].iter().enumerate() {
                p[c] = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line_no, format!("malformed coordinate '{f}'")))?;
            }
            z.push(zi);
            pos.push(p);
        }
        let mol = Molecule::new(z, pos).map_err(|e| err(count_line, e.to_string()))?;
        frames.push((mol, comment));
        i = body + n;
    }
    if frames.is_empty() {
        return Err(err(1, "no frames"));
    }
    Ok(frames)
}

pub fn parse_xyz(text: &str) -> Result<Vec<Molecule>, XyzError> {
    Ok(parse_xyz_with_comments(text)?.into_iter().map(|(m, _)| m).collect())
}

pub fn write_frame(out: &mut String, mol: &Molecule, comment: &str) {
    let _ = writeln!(out, "{}", mol.len());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for (z, p) in mol.atomic_numbers().iter().zip(mol.positions()) {
        let sym = element_symbol(*z).unwrap_or("X");
        let _ = writeln!(out, "{sym:<2} {:>18.12} {:>18.12} {:>18.12}", p[0], p[1], p[2]);
    }
}

pub fn write_xyz(frames: &[(Molecule, String)]) -> String {
    let mut out = String::new();
    for (m, c) in frames {
        write_frame(&mut out, m, c);
    }
    out
}
