//! `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! g = 1
//! c = 1
//! p0 = -1
//! rho = poly(1, -0.2)
//! beta = table(beta.csv)
//! nq = 64
//! np = 64
//! ```
//!
//! Profiles are `poly(c0, c1, ...)` (coefficients in increasing degree) or
//! `table(path)` with a CSV `p,value`; relative table paths are resolved
//! against the config file's directory. For `beta` the table gives β(−p) at
//! each p in [p0, 0].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use strataflow::laminar::Admissibility;
use strataflow::profiles::{BernoulliProfile, DensityProfile, FlowParams, ProfileBundle, ProfileError, Shape};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("{key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("{path}: {msg}")]
    Table { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    Poly(Vec<f64>),
    Table(PathBuf),
}

impl ProfileSpec {
    fn render(&self) -> String {
        match self {
            ProfileSpec::Poly(c) => {
                let parts: Vec<String> = c.iter().map(|v| fmt_real(*v)).collect();
                format!("poly({})", parts.join(", "))
            }
            ProfileSpec::Table(p) => format!("table({})", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub g: f64,
    pub c: f64,
    pub p0: f64,
    pub rho: ProfileSpec,
    pub beta: ProfileSpec,
    pub nq: usize,
    pub np: usize,
    /// λ for the `laminar` subcommand.
    pub lambda: Option<f64>,
    pub admissibility: Admissibility,
    pub tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Arclength step; defaults to 0.02·d at λ*.
    pub ds: Option<f64>,
    pub steps: usize,
    pub direction: f64,
    /// O_δ threshold; defaults to 1e-3·min H_p at λ*.
    pub delta: Option<f64>,
    /// Amplitude of the first branch point; defaults to 1e-2·d.
    pub s0: Option<f64>,
    pub threads: Option<usize>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            g: 1.0,
            c: 1.0,
            p0: -1.0,
            rho: ProfileSpec::Poly(vec![1.0]),
            beta: ProfileSpec::Poly(vec![0.0]),
            nq: 64,
            np: 64,
            lambda: None,
            admissibility: Admissibility::Strict,
            tol: 1e-10,
            step_tol: 1e-12,
            max_iter: 30,
            ds: None,
            steps: 25,
            direction: 1.0,
            delta: None,
            s0: None,
            threads: None,
            output: PathBuf::from("out"),
        }
    }
}

// Shortest representation that parses back to the same bits.
fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

fn parse_real(s: &str, line: usize, col: usize) -> Result<f64, ConfigError> {
    let t = s.trim();
    let lead = s.len() - s.trim_start().len();
    let err = |msg: String| ConfigError::Parse { line, col: col + lead, msg };
    let looks_numeric = !t.is_empty() && t.chars().all(|ch| ch.is_ascii_digit() || "+-.eE".contains(ch));
    if !looks_numeric {
        return Err(err(format!("expected a real number, found {t:?}")));
    }
    let v: f64 = t.parse().map_err(|_| err(format!("expected a real number, found {t:?}")))?;
    if !v.is_finite() {
        return Err(err(format!("{t} is not finite")));
    }
    Ok(v)
}

fn parse_usize(s: &str, line: usize, col: usize) -> Result<usize, ConfigError> {
    let t = s.trim();
    let lead = s.len() - s.trim_start().len();
    t.parse().map_err(|_| ConfigError::Parse { line, col: col + lead, msg: format!("expected a nonnegative integer, found {t:?}") })
}

fn parse_profile(s: &str, line: usize, col: usize) -> Result<ProfileSpec, ConfigError> {
    let lead = s.len() - s.trim_start().len();
    let t = s.trim();
    let col = col + lead;
    let err = |c: usize, msg: &str| ConfigError::Parse { line, col: c, msg: msg.into() };
    let (kind, rest) = if let Some(r) = t.strip_prefix("poly") {
        ("poly", r)
    } else if let Some(r) = t.strip_prefix("table") {
        ("table", r)
    } else {
        return Err(err(col, "expected poly(...) or table(...)"));
    };
    let open = col + kind.len();
    if !rest.starts_with('(') {
        return Err(err(open, "expected '('"));
    }
    let Some(close) = rest.rfind(')') else {
        return Err(err(open, "unclosed '('"));
    };
    if !rest[close + 1..].trim().is_empty() {
        return Err(err(open + close + 1, "unexpected text after ')'"));
    }
    let inner = &rest[1..close];
    match kind {
        "poly" => {
            if inner.trim().is_empty() {
                return Err(err(open + 1, "poly() needs at least one coefficient"));
            }
            let mut coeffs = Vec::new();
            let mut at = open + 1;
            for part in inner.split(',') {
                coeffs.push(parse_real(part, line, at)?);
                at += part.len() + 1;
            }
            Ok(ProfileSpec::Poly(coeffs))
        }
        _ => {
            let path = inner.trim();
            if path.is_empty() {
                return Err(err(open + 1, "table() needs a path"));
            }
            Ok(ProfileSpec::Table(PathBuf::from(path)))
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("");
            if body.trim().is_empty() {
                continue;
            }
            let Some(eq) = body.find('=') else {
                let col = body.len() - body.trim_start().len() + 1;
                return Err(ConfigError::Parse { line, col, msg: "expected key = value".into() });
            };
            let key = body[..eq].trim();
            let key_col = body.len() - body.trim_start().len() + 1;
            let vcol = eq + 2;
            let value = &body[eq + 1..];
            if seen.iter().any(|s| s == key) {
                return Err(ConfigError::Parse { line, col: key_col, msg: format!("duplicate key {key}") });
            }
            seen.push(key.to_string());
            match key {
                "g" => cfg.g = parse_real(value, line, vcol)?,
                "c" => cfg.c = parse_real(value, line, vcol)?,
                "p0" => cfg.p0 = parse_real(value, line, vcol)?,
                "rho" => cfg.rho = parse_profile(value, line, vcol)?,
                "beta" => cfg.beta = parse_profile(value, line, vcol)?,
                "nq" => cfg.nq = parse_usize(value, line, vcol)?,
                "np" => cfg.np = parse_usize(value, line, vcol)?,
                "lambda" => cfg.lambda = Some(parse_real(value, line, vcol)?),
                "admissibility" => {
                    cfg.admissibility = match value.trim() {
                        "strict" => Admissibility::Strict,
                        "relaxed" => Admissibility::Relaxed,
                        other => {
                            return Err(ConfigError::Parse {
                                line,
                                col: vcol + value.len() - value.trim_start().len(),
                                msg: format!("expected strict or relaxed, found {other:?}"),
                            })
                        }
                    }
                }
                "tol" => cfg.tol = parse_real(value, line, vcol)?,
                "step_tol" => cfg.step_tol = parse_real(value, line, vcol)?,
                "max_iter" => cfg.max_iter = parse_usize(value, line, vcol)?,
                "ds" => cfg.ds = Some(parse_real(value, line, vcol)?),
                "steps" => cfg.steps = parse_usize(value, line, vcol)?,
                "direction" => cfg.direction = parse_real(value, line, vcol)?,
                "delta" => cfg.delta = Some(parse_real(value, line, vcol)?),
                "s0" => cfg.s0 = Some(parse_real(value, line, vcol)?),
                "threads" => cfg.threads = Some(parse_usize(value, line, vcol)?),
                "output" => cfg.output = PathBuf::from(value.trim()),
                _ => return Err(ConfigError::Parse { line, col: key_col, msg: format!("unknown key {key:?}") }),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, msg: &str| Err(ConfigError::Invalid { key, msg: msg.into() });
        if !(self.g > 0.0) {
            return bad("g", "must be positive");
        }
        if !(self.c > 0.0) {
            return bad("c", "must be positive");
        }
        if !(self.p0 < 0.0) {
            return bad("p0", "must be negative");
        }
        if self.nq < 16 || self.np < 16 {
            return bad("nq/np", "grids need at least 16 nodes per direction");
        }
        if !(self.tol > 0.0) {
            return bad("tol", "must be positive");
        }
        if !(self.step_tol > 0.0) {
            return bad("step_tol", "must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be positive");
        }
        if self.ds.is_some_and(|v| !(v > 0.0)) {
            return bad("ds", "must be positive");
        }
        if self.delta.is_some_and(|v| !(v > 0.0)) {
            return bad("delta", "must be positive");
        }
        if self.s0.is_some_and(|v| !(v > 0.0)) {
            return bad("s0", "must be positive");
        }
        if self.direction != 1.0 && self.direction != -1.0 {
            return bad("direction", "must be 1 or -1");
        }
        if self.threads == Some(0) {
            return bad("threads", "must be positive");
        }
        if self.lambda.is_some_and(|v| !v.is_finite()) {
            return bad("lambda", "must be finite");
        }
        Ok(())
    }

    /// The canonical text form; `parse(to_text(c)) == c` bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("g", fmt_real(self.g));
        kv("c", fmt_real(self.c));
        kv("p0", fmt_real(self.p0));
        kv("rho", self.rho.render());
        kv("beta", self.beta.render());
        kv("nq", self.nq.to_string());
        kv("np", self.np.to_string());
        if let Some(v) = self.lambda {
            kv("lambda", fmt_real(v));
        }
        kv(
            "admissibility",
            match self.admissibility {
                Admissibility::Strict => "strict",
                Admissibility::Relaxed => "relaxed",
            }
            .into(),
        );
        kv("tol", fmt_real(self.tol));
        kv("step_tol", fmt_real(self.step_tol));
        kv("max_iter", self.max_iter.to_string());
        if let Some(v) = self.ds {
            kv("ds", fmt_real(v));
        }
        kv("steps", self.steps.to_string());
        kv("direction", fmt_real(self.direction));
        if let Some(v) = self.delta {
            kv("delta", fmt_real(v));
        }
        if let Some(v) = self.s0 {
            kv("s0", fmt_real(v));
        }
        if let Some(v) = self.threads {
            kv("threads", v.to_string());
        }
        kv("output", self.output.display().to_string());
        s
    }

    /// Builds the profile bundle; table paths are taken relative to `base`.
    pub fn bundle(&self, base: &Path) -> Result<ProfileBundle, ConfigError> {
        let params = FlowParams::new(self.g, self.c, self.p0)?;
        let rho = match &self.rho {
            ProfileSpec::Poly(c) => Shape::poly(c),
            ProfileSpec::Table(p) => {
                let (x, y) = read_table(&base.join(p))?;
                Shape::table(x, y)?
            }
        };
        let beta = match &self.beta {
            ProfileSpec::Poly(c) => Shape::poly(c),
            ProfileSpec::Table(p) => {
                // rows (p, β(−p)) become nodes s = −p
                let (x, y) = read_table(&base.join(p))?;
                let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(y).map(|(p, v)| (-p, v)).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                Shape::table(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())?
            }
        };
        let bundle = ProfileBundle::new(
            params,
            DensityProfile::new(rho, self.p0)?,
            BernoulliProfile::new(beta, self.p0)?,
        )?;
        Ok(bundle)
    }
}

/// Two-column CSV `p,value` with a header row.
pub fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    let table_err = |msg: String| ConfigError::Table { path: path.to_owned(), msg };
    let mut rd = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
    let headers = rd.headers().map_err(|e| table_err(e.to_string()))?.clone();
    if headers.len() != 2 || headers[0].trim() != "p" || headers[1].trim() != "value" {
        return Err(table_err(format!("expected header p,value, found {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| table_err(e.to_string()))?;
        let row = k + 2;
        let num = |i: usize| -> Result<f64, ConfigError> {
            let t = rec.get(i).unwrap_or("").trim();
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| table_err(format!("row {row}: bad number {t:?}")))
        };
        x.push(num(0)?);
        y.push(num(1)?);
    }
    Ok((x, y))
}
