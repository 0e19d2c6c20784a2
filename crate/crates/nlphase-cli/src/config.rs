//! Line-oriented `[block]` / `key = value` configuration with per-value
//! provenance, so every diagnostic can name the line or flag it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Line(usize),
    Flag(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Line(n) => write!(f, "config line {n}"),
            Source::Flag(name) => write!(f, "flag --{name}"),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: String) -> Result<T, ConfigError> {
    Err(ConfigError(msg))
}

/// Recognised keys per block.
const SCHEMA: &[(&str, &[&str])] = &[
    ("kernel", &["family", "n", "s", "p"]),
    ("potential", &["name"]),
    ("domain", &["R", "R_box", "h", "h_divisor"]),
    ("data", &["rule", "angle", "slope", "width", "shift", "value", "file", "length"]),
    ("solver", &["max_iters", "grad_tol", "step0", "backtrack_factor", "armijo_c", "box"]),
    ("quadrature", &["self_pair", "tail", "summation"]),
    (
        "experiment",
        &[
            "R_list",
            "seed",
            "sample_count",
            "h",
            "width",
            "center_fraction",
            "amplitude",
            "residual_threshold",
            "pairs",
        ],
    ),
    ("output", &["dir"]),
];

fn known(block: &str, key: &str) -> bool {
    SCHEMA.iter().any(|(b, keys)| *b == block && keys.contains(&key))
}

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<(String, String), (String, Source)>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        let mut block: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return err(format!("config line {line_no}: malformed block header '{line}'"));
                };
                let name = name.trim();
                if !SCHEMA.iter().any(|(b, _)| *b == name) {
                    return err(format!("config line {line_no}: unknown block [{name}]"));
                }
                block = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("config line {line_no}: expected 'key = value', got '{line}'"));
            };
            let Some(b) = &block else {
                return err(format!("config line {line_no}: '{}' appears before any [block] header", key.trim()));
            };
            let key = key.trim();
            if !known(b, key) {
                return err(format!("config line {line_no}: unknown field '{key}' in [{b}]"));
            }
            s.values.insert((b.clone(), key.to_string()), (value.trim().to_string(), Source::Line(line_no)));
        }
        Ok(s)
    }

    /// Shadow a value from the command line.
    pub fn set_flag(&mut self, block: &str, key: &str, value: &str, flag: &str) -> Result<(), ConfigError> {
        if !known(block, key) {
            return err(format!("flag --{flag}: unknown field '{key}' in [{block}]"));
        }
        self.values.insert((block.into(), key.into()), (value.into(), Source::Flag(flag.into())));
        Ok(())
    }

    /// `block.key=value` from `--set`.
    pub fn set_assignment(&mut self, text: &str) -> Result<(), ConfigError> {
        let Some((path, value)) = text.split_once('=') else {
            return err(format!("flag --set: expected block.key=value, got '{text}'"));
        };
        let Some((block, key)) = path.trim().split_once('.') else {
            return err(format!("flag --set: expected block.key=value, got '{text}'"));
        };
        self.set_flag(block.trim(), key.trim(), value.trim(), "set")
    }

    pub fn raw(&self, block: &str, key: &str) -> Option<(&str, &Source)> {
        self.values.get(&(block.to_string(), key.to_string())).map(|(v, s)| (v.as_str(), s))
    }

    pub fn get<T: FromStr>(&self, block: &str, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(block, key) {
            None => Ok(None),
            Some((v, src)) => match v.parse::<T>() {
                Ok(x) => Ok(Some(x)),
                Err(_) => err(format!("{src}: field '{key}' in [{block}]: expected {what}, got '{v}'")),
            },
        }
    }

    pub fn num(&self, block: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.get::<f64>(block, key, "a number")?.unwrap_or(default))
    }

    pub fn opt_num(&self, block: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get::<f64>(block, key, "a number")
    }

    pub fn int(&self, block: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.get::<u64>(block, key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn text(&self, block: &str, key: &str, default: &str) -> String {
        self.raw(block, key).map_or(default.to_string(), |(v, _)| v.to_string())
    }

    pub fn list(&self, block: &str, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(block, key) {
            None => Ok(default.to_vec()),
            Some((v, src)) => v
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        ConfigError(format!("{src}: field '{key}' in [{block}]: '{}' is not a number", t.trim()))
                    })
                })
                .collect(),
        }
    }

    /// Error pointing at the place `block.key` was set, or at the block if
    /// it came from a default.
    pub fn invalid(&self, block: &str, key: &str, msg: &str) -> ConfigError {
        match self.raw(block, key) {
            Some((_, src)) => ConfigError(format!("{src}: field '{key}' in [{block}]: {msg}")),
            None => ConfigError(format!("field '{key}' in [{block}]: {msg}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_comments() {
        let s = Settings::parse("# run\n[kernel]\nn = 2  # plane\ns=0.25\n\n[experiment]\nR_list = 4, 8,16\n").unwrap();
        assert_eq!(s.get::<usize>("kernel", "n", "int").unwrap(), Some(2));
        assert_eq!(s.num("kernel", "s", 0.0).unwrap(), 0.25);
        assert_eq!(s.list("experiment", "R_list", &[]).unwrap(), vec![4.0, 8.0, 16.0]);
        assert_eq!(s.num("kernel", "p", 2.0).unwrap(), 2.0);
    }

    #[test]
    fn diagnostics_name_the_line() {
        let e = Settings::parse("[kernel]\nn = 1\nq = 3\n").unwrap_err();
        assert_eq!(e.0, "config line 3: unknown field 'q' in [kernel]");
        let e = Settings::parse("n = 1\n").unwrap_err();
        assert!(e.0.starts_with("config line 1:"));
        let s = Settings::parse("[kernel]\n\ns = half\n").unwrap();
        let e = s.num("kernel", "s", 0.5).unwrap_err();
        assert_eq!(e.0, "config line 3: field 's' in [kernel]: expected a number, got 'half'");
    }

    #[test]
    fn flags_shadow_config() {
        let mut s = Settings::parse("[kernel]\ns = 0.25\n").unwrap();
        s.set_flag("kernel", "s", "0.75", "s").unwrap();
        assert_eq!(s.num("kernel", "s", 0.5).unwrap(), 0.75);
        s.set_assignment("solver.max_iters=10").unwrap();
        assert_eq!(s.int("solver", "max_iters", 1).unwrap(), 10);
        assert!(s.set_assignment("solver.bogus=1").is_err());
    }
}
