//! Text formats: call-syntax distribution and dependence specs, and the
//! line-oriented `key = value` document used by experiment specs.
//!
//! ```text
//! # comment
//! name = fig3_left
//! models = table2
//! dep = clayton(tau=0.5)
//!
//! [fluid]
//! q0 = 5
//! ```

use crate::dist::{ClaytonCopula, DependenceModel, JobSizeModel};
use crate::error::{Error, Result};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// A number, optionally written as a ratio `a/b`.
pub fn parse_number(s: &str) -> Result<f64> {
    parse_number_at(s, 1)
}

pub fn parse_number_at(s: &str, line: usize) -> Result<f64> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| err(line, format!("bad number `{s}`")))?;
            let b: f64 = b.trim().parse().map_err(|_| err(line, format!("bad number `{s}`")))?;
            a / b
        }
        None => s.parse().map_err(|_| err(line, format!("bad number `{s}`")))?,
    };
    if !value.is_finite() {
        return Err(err(line, format!("`{s}` is not a finite number")));
    }
    Ok(value)
}

/// Splits on commas that are not inside parentheses.
pub fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() || !parts.is_empty() {
        parts.push(last);
    }
    parts
}

/// `name` or `name(key=value, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Call<'a> {
    pub name: &'a str,
    pub args: Vec<(&'a str, &'a str)>,
}

pub fn parse_call(s: &str, line: usize) -> Result<Call<'_>> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(err(line, format!("bad name `{s}`")));
        }
        return Ok(Call { name: s, args: Vec::new() });
    };
    if !s.ends_with(')') {
        return Err(err(line, format!("missing `)` in `{s}`")));
    }
    let name = s[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(err(line, format!("bad name in `{s}`")));
    }
    let inner = &s[open + 1..s.len() - 1];
    if inner.contains(['(', ')']) {
        return Err(err(line, format!("nested parentheses in `{s}`")));
    }
    let mut args = Vec::new();
    if !inner.trim().is_empty() {
        for part in inner.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| err(line, format!("argument `{}` is not key=value", part.trim())))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(err(line, format!("empty key or value in `{}`", part.trim())));
            }
            if args.iter().any(|(seen, _)| *seen == k) {
                return Err(err(line, format!("duplicate argument `{k}`")));
            }
            args.push((k, v));
        }
    }
    Ok(Call { name, args })
}

impl Call<'_> {
    fn take(&self, keys: &[&str], line: usize) -> Result<Vec<f64>> {
        for (k, _) in &self.args {
            if !keys.contains(k) {
                return Err(err(line, format!("{} takes ({}), not `{k}`", self.name, keys.join(", "))));
            }
        }
        keys.iter()
            .map(|key| {
                let (_, v) = self
                    .args
                    .iter()
                    .find(|(k, _)| k == key)
                    .ok_or_else(|| err(line, format!("{} needs `{key}`", self.name)))?;
                parse_number_at(v, line)
            })
            .collect()
    }
}

fn invalid(line: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidParameter(msg) => err(line, msg),
        other => other,
    }
}

pub fn parse_distribution(s: &str) -> Result<JobSizeModel> {
    parse_distribution_at(s, 1)
}

pub fn parse_distribution_at(s: &str, line: usize) -> Result<JobSizeModel> {
    let call = parse_call(s, line)?;
    if call.args.is_empty() && !s.contains('(') {
        return JobSizeModel::preset(call.name).ok_or_else(|| err(line, format!("unknown distribution preset `{}`", call.name)));
    }
    let model = match call.name {
        "deterministic" => JobSizeModel::deterministic(call.take(&["value"], line)?[0]),
        "exponential" => JobSizeModel::exponential(call.take(&["mean"], line)?[0]),
        "erlang" => {
            let v = call.take(&["k", "stage_mean"], line)?;
            if v[0] < 1.0 || v[0].fract() != 0.0 || v[0] > u32::MAX as f64 {
                return Err(err(line, format!("erlang k must be a positive integer, got {}", v[0])));
            }
            JobSizeModel::erlang(v[0] as u32, v[1])
        }
        "bimodal" => {
            let v = call.take(&["lo", "hi", "p_lo"], line)?;
            JobSizeModel::bimodal(v[0], v[1], v[2])
        }
        "weibull" => {
            let v = call.take(&["shape", "scale"], line)?;
            JobSizeModel::weibull(v[0], v[1])
        }
        "scaled_bernoulli" => JobSizeModel::scaled_bernoulli(call.take(&["k"], line)?[0]),
        other => return Err(err(line, format!("unknown distribution `{other}`"))),
    };
    model.map_err(invalid(line))
}

/// A comma-separated list of distributions; `table2` expands to the seven presets.
pub fn parse_distribution_list(s: &str, line: usize) -> Result<Vec<(String, JobSizeModel)>> {
    let mut out = Vec::new();
    for part in split_top_level(s) {
        if part == "table2" {
            out.extend(JobSizeModel::table2().into_iter().map(|(n, m)| (n.to_string(), m)));
        } else {
            let m = parse_distribution_at(part, line)?;
            let label = if part.contains('(') { m.to_string() } else { part.to_string() };
            out.push((label, m));
        }
    }
    if out.is_empty() {
        return Err(err(line, "empty distribution list"));
    }
    Ok(out)
}

pub fn parse_dependence(s: &str) -> Result<DependenceModel> {
    parse_dependence_at(s, 1)
}

pub fn parse_dependence_at(s: &str, line: usize) -> Result<DependenceModel> {
    let call = parse_call(s, line)?;
    match (call.name, call.args.as_slice()) {
        ("identical", []) if !s.contains('(') => Ok(DependenceModel::Identical),
        ("iid", []) if !s.contains('(') => Ok(DependenceModel::Iid),
        ("clayton", [("theta", v)]) => {
            ClaytonCopula::new(parse_number_at(v, line)?).map(DependenceModel::Copula).map_err(invalid(line))
        }
        ("clayton", [("tau", v)]) => {
            ClaytonCopula::from_kendall_tau(parse_number_at(v, line)?).map(DependenceModel::Copula).map_err(invalid(line))
        }
        ("clayton", _) => Err(err(line, "clayton takes exactly one of (theta, tau)")),
        (other, _) => Err(err(line, format!("unknown dependence `{other}`"))),
    }
}

/// Comma-separated numbers, or an inclusive integer range `a..b`.
pub fn parse_number_list(s: &str, line: usize) -> Result<Vec<f64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a = parse_count(a, line)?;
        let b = parse_count(b, line)?;
        if a > b {
            return Err(err(line, format!("empty range `{}`", s.trim())));
        }
        return Ok((a..=b).map(|x| x as f64).collect());
    }
    let v: Vec<f64> = s.split(',').map(|p| parse_number_at(p, line)).collect::<Result<_>>()?;
    Ok(v)
}

pub fn parse_count(s: &str, line: usize) -> Result<u64> {
    let s = s.trim();
    let cleaned: String = s.chars().filter(|&c| c != '_').collect();
    if let Ok(v) = cleaned.parse::<u64>() {
        return Ok(v);
    }
    // 1e5 style
    let f = parse_number_at(&cleaned, line)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(err(line, format!("`{s}` is not a nonnegative integer")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// `None` for keys before the first header.
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

pub fn parse_document(text: &str) -> Result<Document> {
    let mut doc = Document { sections: vec![Section { name: None, line: 0, entries: Vec::new() }] };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err(line, "section header needs a closing `]`"))?.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(line, format!("bad section name `{name}`")));
            }
            if doc.sections.iter().any(|s| s.name.as_deref() == Some(name)) {
                return Err(err(line, format!("duplicate section [{name}]")));
            }
            doc.sections.push(Section { name: Some(name.to_string()), line, entries: Vec::new() });
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(err(line, format!("bad key `{k}`")));
        }
        if v.is_empty() {
            return Err(err(line, format!("`{k}` has no value")));
        }
        let section = doc.sections.last_mut().expect("root section");
        if section.entries.iter().any(|e| e.key == k) {
            return Err(err(line, format!("duplicate key `{k}`")));
        }
        section.entries.push(Entry { key: k.to_string(), value: v.to_string(), line });
    }
    Ok(doc)
}

impl Document {
    pub fn section(&self, name: Option<&str>) -> Option<&Section> {
        self.sections.iter().find(|s| s.name.as_deref() == name)
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Rejects any key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                let place = self.name.as_deref().map_or(String::new(), |n| format!(" in [{n}]"));
                return Err(err(e.line, format!("unknown key `{}`{place}", e.key)));
            }
        }
        Ok(())
    }
}
