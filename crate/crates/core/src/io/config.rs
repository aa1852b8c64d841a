//! Plain-text run configuration.
//!
//! ```toml
//! [domain]
//! shape = "disk"      # or "rectangle" with lx, ly
//! radius = 1.0
//! nx = 65
//!
//! [time]
//! t_end = 1.0
//! dt = 0.02
//! ```
//!
//! Sections `[solver]`, `[forcing]`, `[output]` and `[initial]` are optional.
//! Unknown sections and keys are rejected with the offending line.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::elliptic::SolveMethod;
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Interpolation, Vec2, MIN_RESOLUTION};
use crate::scheme::{ForcingSpec, RunConfig};

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "domain",
        &["shape", "lx", "ly", "center", "radius", "nx", "ny"],
    ),
    ("time", &["t_end", "dt", "t_window"]),
    (
        "solver",
        &[
            "tolerance",
            "max_iterations",
            "method",
            "outer_tol",
            "max_outer",
            "min_outer",
            "beta",
            "interpolation",
        ],
    ),
    ("forcing", &["kind", "value", "amplitude", "wavenumber"]),
    ("output", &["every", "dir"]),
    ("initial", &["psi0", "q0"]),
];

/// Initial data named in the config: a test field name or a snapshot path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialSpec {
    pub psi0: Option<String>,
    pub q0: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub path: PathBuf,
    pub run: RunConfig,
    pub initial: InitialSpec,
    pub output_dir: Option<PathBuf>,
}

impl ParsedConfig {
    /// Resolved settings in the config syntax.
    pub fn echo(&self) -> String {
        let r = &self.run;
        let mut s = String::from("[domain]\n");
        match r.domain.shape {
            crate::geometry::Shape::Rectangle { lx, ly } => {
                s += &format!("shape = \"rectangle\"\nlx = {lx}\nly = {ly}\n");
            }
            crate::geometry::Shape::Disk { center, radius } => {
                s += &format!(
                    "shape = \"disk\"\ncenter = [{}, {}]\nradius = {radius}\n",
                    center.x, center.y
                );
            }
        }
        s += &format!("nx = {}\nny = {}\n\n", r.domain.nx, r.domain.ny);
        s += &format!(
            "[time]\nt_end = {}\ndt = {}\nt_window = {}\n\n",
            r.t_end, r.dt, r.t_window
        );
        let method = match r.solver.method {
            SolveMethod::Cg => "cg",
            SolveMethod::Direct => "direct",
        };
        let interp = match r.interpolation {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        };
        s += &format!(
            "[solver]\ntolerance = {:e}\nmax_iterations = {}\nmethod = \"{method}\"\nouter_tol = {:e}\nmax_outer = {}\nmin_outer = {}\nbeta = {}\ninterpolation = \"{interp}\"\n\n",
            r.solver.tolerance, r.solver.max_iterations, r.outer_tol, r.max_outer, r.min_outer, r.beta
        );
        s += "[forcing]\n";
        match r.forcing {
            ForcingSpec::Zero => s += "kind = \"zero\"\n",
            ForcingSpec::Constant { value } => {
                s += &format!("kind = \"constant\"\nvalue = {value}\n")
            }
            ForcingSpec::Wind {
                amplitude,
                wavenumber,
            } => {
                s += &format!(
                    "kind = \"wind\"\namplitude = {amplitude}\nwavenumber = {wavenumber}\n"
                )
            }
        }
        s += &format!("\n[output]\nevery = {}\n", r.output_every);
        if let Some(d) = &self.output_dir {
            s += &format!("dir = \"{}\"\n", d.display());
        }
        if self.initial.psi0.is_some() || self.initial.q0.is_some() {
            s += "\n[initial]\n";
            if let Some(v) = &self.initial.psi0 {
                s += &format!("psi0 = \"{v}\"\n");
            }
            if let Some(v) = &self.initial.q0 {
                s += &format!("q0 = \"{v}\"\n");
            }
        }
        s
    }
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        line: 0,
        message: format!("cannot read: {e}"),
    })?;
    parse_config_str(&text, path)
}

struct Reader<'a> {
    text: &'a str,
    path: &'a Path,
    table: Table,
}

impl Reader<'_> {
    fn err(&self, section: &str, key: Option<&str>, message: String) -> Error {
        Error::Config {
            path: self.path.to_path_buf(),
            line: locate(self.text, section, key),
            message,
        }
    }

    fn section(&self, name: &str) -> Option<&Table> {
        self.table.get(name).and_then(Value::as_table)
    }

    fn value(&self, section: &str, key: &str) -> Option<&Value> {
        self.section(section).and_then(|t| t.get(key))
    }

    fn require<T>(
        &self,
        section: &str,
        key: &str,
        get: impl Fn(&Self, &str, &str) -> Result<Option<T>>,
    ) -> Result<T> {
        get(self, section, key)?.ok_or_else(|| {
            self.err(
                section,
                None,
                format!("missing required key `{key}` in [{section}]"),
            )
        })
    }

    fn float(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(self.err(
                section,
                Some(key),
                format!("`{key}` must be a number, found {}", other.type_str()),
            )),
        }
    }

    fn positive(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.float(section, key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(self.err(
                section,
                Some(key),
                format!("`{key}` must be positive, got {v}"),
            )),
            other => Ok(other),
        }
    }

    fn count(&self, section: &str, key: &str) -> Result<Option<usize>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 1 => Ok(Some(*i as usize)),
            Some(other) => Err(self.err(
                section,
                Some(key),
                format!("`{key}` must be a positive integer, found {other}"),
            )),
        }
    }

    fn string(&self, section: &str, key: &str) -> Result<Option<String>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(self.err(
                section,
                Some(key),
                format!("`{key}` must be a string, found {}", other.type_str()),
            )),
        }
    }

    fn check_keys(&self) -> Result<()> {
        for (name, value) in &self.table {
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
                let names: Vec<&str> = SECTIONS.iter().map(|s| s.0).collect();
                return Err(self.err(
                    name,
                    None,
                    format!("unknown section [{name}]{}", suggestion(name, &names)),
                ));
            };
            let Some(table) = value.as_table() else {
                return Err(self.err(name, None, format!("`{name}` must be a section")));
            };
            for key in table.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(self.err(
                        name,
                        Some(key),
                        format!("unknown key `{key}` in [{name}]{}", suggestion(key, keys)),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn suggestion(word: &str, candidates: &[&str]) -> String {
    let best = candidates
        .iter()
        .map(|c| (strsim::levenshtein(word, c), *c))
        .min();
    match best {
        Some((d, c)) if d <= 3 => format!("; did you mean `{c}`?"),
        _ => format!("; expected one of: {}", candidates.join(", ")),
    }
}

/// 1-based line of `key` inside `[section]`, or of the section header when `key` is
/// `None`. Zero when not found.
fn locate(text: &str, section: &str, key: Option<&str>) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if key.is_none() && current == section {
                return i + 1;
            }
            continue;
        }
        if let Some(key) = key {
            if current == section {
                let lhs = line
                    .split('=')
                    .next()
                    .unwrap_or("")
                    .trim()
                    .trim_matches('"');
                if lhs == key {
                    return i + 1;
                }
            }
        }
    }
    0
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<ParsedConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| {
            text[..s.start.min(text.len())].lines().count().max(1)
        }),
        message: e.message().to_string(),
    })?;
    let r = Reader { text, path, table };
    r.check_keys()?;

    let shape = r.require("domain", "shape", Reader::string)?;
    let nx = r.require("domain", "nx", Reader::count)?;
    let ny = r.count("domain", "ny")?.unwrap_or(nx);
    for (key, n) in [("nx", nx), ("ny", ny)] {
        if n < MIN_RESOLUTION {
            return Err(r.err(
                "domain",
                Some(key),
                format!("`{key}` = {n} is below the minimum of {MIN_RESOLUTION} nodes"),
            ));
        }
    }
    let domain = match shape.as_str() {
        "rectangle" => DomainSpec::rectangle(
            r.require("domain", "lx", Reader::positive)?,
            r.require("domain", "ly", Reader::positive)?,
            nx,
            ny,
        ),
        "disk" => {
            let center = match r.value("domain", "center") {
                None => Vec2::ZERO,
                Some(Value::Array(a)) if a.len() == 2 => {
                    let c: Vec<f64> = a
                        .iter()
                        .filter_map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                        .collect();
                    if c.len() != 2 {
                        return Err(r.err(
                            "domain",
                            Some("center"),
                            "`center` must be two numbers".into(),
                        ));
                    }
                    Vec2::new(c[0], c[1])
                }
                Some(_) => {
                    return Err(r.err("domain", Some("center"), "`center` must be [x, y]".into()))
                }
            };
            DomainSpec::disk(
                center,
                r.require("domain", "radius", Reader::positive)?,
                nx,
                ny,
            )
        }
        other => {
            return Err(r.err(
                "domain",
                Some("shape"),
                format!("unknown shape `{other}` (expected rectangle or disk)"),
            ))
        }
    };

    let t_end = r.require("time", "t_end", Reader::positive)?;
    let dt = r.require("time", "dt", Reader::positive)?;
    let mut run = RunConfig::new(domain, t_end, dt);
    if let Some(tw) = r.positive("time", "t_window")? {
        run.t_window = tw;
    }
    if dt > run.t_window {
        return Err(r.err(
            "time",
            Some("dt"),
            format!("`dt` = {dt} exceeds `t_window` = {}", run.t_window),
        ));
    }
    if run.t_window > t_end {
        return Err(r.err(
            "time",
            Some("t_window"),
            format!("`t_window` = {} exceeds `t_end` = {t_end}", run.t_window),
        ));
    }

    if let Some(tol) = r.positive("solver", "tolerance")? {
        if tol >= 1.0 {
            return Err(r.err(
                "solver",
                Some("tolerance"),
                format!("`tolerance` must be below 1, got {tol}"),
            ));
        }
        run.solver.tolerance = tol;
    }
    if let Some(n) = r.count("solver", "max_iterations")? {
        run.solver.max_iterations = n;
    }
    if let Some(m) = r.string("solver", "method")? {
        run.solver.method = match m.as_str() {
            "cg" | "conjugate-gradient" => SolveMethod::Cg,
            "direct" => SolveMethod::Direct,
            other => {
                return Err(r.err(
                    "solver",
                    Some("method"),
                    format!("unknown method `{other}` (expected cg or direct)"),
                ))
            }
        };
    }
    if let Some(tol) = r.positive("solver", "outer_tol")? {
        run.outer_tol = tol;
    }
    if let Some(n) = r.count("solver", "max_outer")? {
        run.max_outer = n;
    }
    if let Some(n) = r.count("solver", "min_outer")? {
        run.min_outer = n;
    }
    if run.min_outer > run.max_outer {
        return Err(r.err(
            "solver",
            Some("min_outer"),
            format!(
                "`min_outer` = {} exceeds `max_outer` = {}",
                run.min_outer, run.max_outer
            ),
        ));
    }
    if let Some(b) = r.float("solver", "beta")? {
        run.beta = b;
    }
    if let Some(i) = r.string("solver", "interpolation")? {
        run.interpolation = match i.as_str() {
            "bilinear" => Interpolation::Bilinear,
            "bicubic" => Interpolation::Bicubic,
            other => {
                return Err(r.err(
                    "solver",
                    Some("interpolation"),
                    format!("unknown interpolation `{other}` (expected bilinear or bicubic)"),
                ))
            }
        };
    }

    let kind = r
        .string("forcing", "kind")?
        .unwrap_or_else(|| "zero".into());
    run.forcing = match kind.as_str() {
        "zero" => ForcingSpec::Zero,
        "constant" => ForcingSpec::Constant {
            value: r.require("forcing", "value", Reader::float)?,
        },
        "wind" => ForcingSpec::Wind {
            amplitude: r.require("forcing", "amplitude", Reader::float)?,
            wavenumber: r.require("forcing", "wavenumber", Reader::float)?,
        },
        other => {
            return Err(r.err(
                "forcing",
                Some("kind"),
                format!("unknown forcing `{other}` (expected zero, constant or wind)"),
            ))
        }
    };

    if let Some(n) = r.count("output", "every")? {
        run.output_every = n;
    }
    let output_dir = r.string("output", "dir")?.map(PathBuf::from);
    let initial = InitialSpec {
        psi0: r.string("initial", "psi0")?,
        q0: r.string("initial", "q0")?,
    };
    run.validate()
        .map_err(|e| r.err("time", None, e.to_string()))?;
    Ok(ParsedConfig {
        path: path.to_path_buf(),
        run,
        initial,
        output_dir,
    })
}
