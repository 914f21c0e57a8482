//! CPLEX LP text export, readable by most external solvers.

use std::fmt::Write;

use super::{MilpModel, VarKind};

fn sanitize(name: &str) -> String {
    let mut s = String::with_capacity(name.len());
    for c in name.chars() {
        match c {
            '+' => s.push_str("_p"),
            '-' => s.push_str("_m"),
            '[' => s.push('('),
            ']' => s.push(')'),
            c if c.is_ascii_alphanumeric() || "!\"#$%&()/,.;?@_`'{}|~".contains(c) => s.push(c),
            _ => s.push('_'),
        }
    }
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s.insert(0, '_');
    }
    s
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names.first().cloned().unwrap_or_default());
        return;
    }
    for &(j, c) in terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", num(c.abs()), names[j]);
    }
}

/// Serializes the weighted objective and all constraints in LP format.
/// Names are made unique after sanitizing.
pub fn write_lp(model: &MilpModel) -> String {
    let mut names: Vec<String> = Vec::with_capacity(model.variables.len());
    let mut seen = std::collections::HashSet::new();
    for v in &model.variables {
        let mut n = sanitize(&v.name);
        while !seen.insert(n.clone()) {
            n.push('_');
        }
        names.push(n);
    }

    let (cost, constant) = model.cost_vector();
    let mut out = String::new();
    out.push_str("\\ objective terms:");
    for t in &model.objective {
        let _ = write!(out, " {}={}", t.name, num(t.weight));
    }
    if constant != 0.0 {
        let _ = write!(out, "\n\\ objective constant: {}", num(constant));
    }
    out.push_str("\nMinimize\n obj:");
    let obj: Vec<(usize, f64)> = cost
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| (j, *c))
        .collect();
    write_terms(&mut out, &obj, &names);
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints.iter().enumerate() {
        let _ = write!(out, " {}_{i}:", sanitize(&c.name));
        let terms: Vec<(usize, f64)> = c.coefficients.iter().map(|(v, a)| (v.0, *a)).collect();
        write_terms(&mut out, &terms, &names);
        let _ = writeln!(out, " {} {}", c.sense, num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, n) in model.variables.iter().zip(&names) {
        if v.kind == VarKind::Binary && v.lower == 0.0 && v.upper == 1.0 {
            continue;
        }
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {n} free");
        } else {
            let _ = writeln!(out, " {} <= {n} <= {}", num(v.lower), num(v.upper));
        }
    }
    let binaries: Vec<&String> = model
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(8) {
            let line: Vec<&str> = chunk.iter().map(|s| s.as_str()).collect();
            let _ = writeln!(out, " {}", line.join(" "));
        }
    }
    out.push_str("End\n");
    out
}
