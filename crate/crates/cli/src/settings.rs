//! Flat `key = value` settings: config files overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use neurtv::net::Architecture;
use neurtv::reg::{RegKind, ScaleMode};
use neurtv::tasks::TaskConfig;

use crate::CliError;

/// Keys accepted in config files and their flag spelling.
pub const KEYS: &[&str] = &[
    "seed",
    "lambda",
    "gamma",
    "factor",
    "iters",
    "lr",
    "arch",
    "width",
    "depth",
    "omega0",
    "bias",
    "ranks",
    "reg",
    "dims",
    "kappa",
    "theta",
    "eps",
    "a_min",
    "scale_mode",
    "update_direction",
    "plateau_tol",
    "plateau_window",
    "field_stride",
    "trace_stride",
    "clip",
    "full_scale",
    "seeds",
    "lambdas",
    "jobs",
];

pub type Settings = BTreeMap<String, String>;

pub fn flag(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

/// Parses a config file. Blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|(line, msg)| {
        CliError::Usage(format!("config {}:{line}: {msg}", path.display()))
    })
}

pub fn parse_config(text: &str) -> Result<Settings, (usize, String)> {
    let mut out = Settings::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err((i + 1, format!("unknown key `{}`", k.trim())));
        }
        out.insert(key, v.trim().to_owned());
    }
    Ok(out)
}

fn value<T: FromStr>(s: &Settings, key: &str) -> Result<Option<T>, CliError> {
    s.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| CliError::Usage(format!("invalid value `{v}` for {}", flag(key))))
        })
        .transpose()
}

pub fn list<T: FromStr>(s: &Settings, key: &str) -> Result<Option<Vec<T>>, CliError> {
    s.get(key)
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim().parse::<T>().map_err(|_| {
                        CliError::Usage(format!("invalid list entry `{x}` for {}", flag(key)))
                    })
                })
                .collect()
        })
        .transpose()
}

fn boolean(s: &Settings, key: &str) -> Result<Option<bool>, CliError> {
    s.get(key)
        .map(|v| match v.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(CliError::Usage(format!("invalid value `{v}` for {}", flag(key)))),
        })
        .transpose()
}

fn check(ok: bool, key: &str, what: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} {what}", flag(key))))
    }
}

/// Applies settings on top of a preset.
pub fn apply(base: TaskConfig, s: &Settings) -> Result<TaskConfig, CliError> {
    let mut cfg = base;
    if boolean(s, "full_scale")?.unwrap_or(false) {
        cfg = cfg.full_scale();
    }
    if let Some(v) = value::<u64>(s, "seed")? {
        cfg = cfg.with_seed(v);
    }
    if let Some(v) = value::<f64>(s, "lambda")? {
        check(v >= 0.0 && v.is_finite(), "lambda", "must be a finite number >= 0")?;
        cfg.lambda = v;
    }
    if let Some(v) = value::<f64>(s, "gamma")? {
        check(v > 0.0 && v.is_finite(), "gamma", "must be a finite number > 0")?;
        cfg.gamma = v;
    }
    if let Some(v) = value::<usize>(s, "factor")? {
        check(v >= 1, "factor", "must be >= 1")?;
        cfg.factor = v;
    }
    if let Some(v) = value::<usize>(s, "iters")? {
        check(v >= 1, "iters", "must be >= 1")?;
        cfg.iterations = v;
    }
    if let Some(v) = value::<f64>(s, "lr")? {
        check(v > 0.0 && v.is_finite(), "lr", "must be a finite number > 0")?;
        cfg.adam.lr = v;
    }
    if let Some(v) = s.get("arch") {
        let arch = Architecture::from_str(v)
            .map_err(|_| CliError::Usage(format!("invalid value `{v}` for --arch")))?;
        if arch != cfg.network.architecture {
            cfg.network.architecture = arch;
            if arch != Architecture::TfNet {
                cfg.network.ranks.clear();
            }
        }
    }
    if let Some(v) = value::<usize>(s, "width")? {
        check(v >= 1, "width", "must be >= 1")?;
        cfg.network.width = v;
    }
    if let Some(v) = value::<usize>(s, "depth")? {
        check(v >= 2, "depth", "must be >= 2")?;
        cfg.network.depth = v;
    }
    if let Some(v) = value::<f64>(s, "omega0")? {
        check(v > 0.0 && v.is_finite(), "omega0", "must be a finite number > 0")?;
        cfg.network.omega0 = v;
    }
    if let Some(v) = boolean(s, "bias")? {
        cfg.network.bias = v;
    }
    if let Some(v) = list::<usize>(s, "ranks")? {
        check(v.iter().all(|&r| r >= 1), "ranks", "entries must be >= 1")?;
        cfg.network.ranks = v;
    }
    if let Some(v) = s.get("reg") {
        cfg.regularizer.kind = RegKind::from_str(v)
            .map_err(|_| CliError::Usage(format!("invalid value `{v}` for --reg")))?;
    }
    if let Some(v) = list::<usize>(s, "dims")? {
        cfg.regularizer.dims = v;
    }
    if let Some(v) = value::<f64>(s, "kappa")? {
        check(v >= 0.0 && v.is_finite(), "kappa", "must be a finite number >= 0")?;
        cfg.regularizer.kappa = v;
    }
    if let Some(v) = value::<f64>(s, "theta")? {
        check(v.is_finite(), "theta", "must be finite")?;
        cfg.regularizer.theta = v.rem_euclid(std::f64::consts::TAU);
    }
    if let Some(v) = value::<f64>(s, "eps")? {
        check(v > 0.0 && v.is_finite(), "eps", "must be a finite number > 0")?;
        cfg.regularizer.eps = v;
    }
    if let Some(v) = value::<f64>(s, "a_min")? {
        check((0.0..=2.0).contains(&v), "a_min", "must lie in [0, 2]")?;
        cfg.regularizer.a_min = v;
    }
    if let Some(v) = s.get("scale_mode") {
        cfg.scale_mode = match v.as_str() {
            "none" => None,
            "first" => Some(ScaleMode::FirstOrder),
            "second" => Some(ScaleMode::SecondOrder),
            _ => {
                return Err(CliError::Usage(format!(
                    "invalid value `{v}` for --scale-mode (none, first, second)"
                )))
            }
        };
    }
    if let Some(v) = boolean(s, "update_direction")? {
        cfg.update_direction = v;
    }
    if let Some(v) = value::<f64>(s, "plateau_tol")? {
        check(v >= 0.0, "plateau_tol", "must be >= 0")?;
        cfg.plateau_tol = v;
    }
    if let Some(v) = value::<usize>(s, "plateau_window")? {
        cfg.plateau_window = v;
    }
    if let Some(v) = value::<usize>(s, "field_stride")? {
        check(v >= 1, "field_stride", "must be >= 1")?;
        cfg.field_stride = v;
    }
    if let Some(v) = value::<usize>(s, "trace_stride")? {
        cfg.trace_stride = v;
    }
    if let Some(v) = boolean(s, "clip")? {
        cfg.clip = v;
    }
    if !cfg.regularizer.kind.uses_field() {
        cfg.scale_mode = None;
        cfg.update_direction = false;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Resolved configuration as `key → value` text, for the run manifest.
pub fn echo(cfg: &TaskConfig) -> BTreeMap<&'static str, String> {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let n = &cfg.network;
    let r = &cfg.regularizer;
    BTreeMap::from([
        ("arch", n.architecture.to_string()),
        ("width", n.width.to_string()),
        ("depth", n.depth.to_string()),
        ("omega0", n.omega0.to_string()),
        ("bias", n.bias.to_string()),
        ("ranks", join(&n.ranks)),
        ("reg", r.kind.to_string()),
        ("dims", join(&r.dims)),
        ("kappa", r.kappa.to_string()),
        ("theta", r.theta.to_string()),
        ("eps", r.eps.to_string()),
        ("a_min", r.a_min.to_string()),
        (
            "scale_mode",
            match cfg.scale_mode {
                None => "none",
                Some(ScaleMode::FirstOrder) => "first",
                Some(ScaleMode::SecondOrder) => "second",
            }
            .to_owned(),
        ),
        ("update_direction", cfg.update_direction.to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("gamma", cfg.gamma.to_string()),
        ("factor", cfg.factor.to_string()),
        ("lr", cfg.adam.lr.to_string()),
        ("beta1", cfg.adam.beta1.to_string()),
        ("beta2", cfg.adam.beta2.to_string()),
        ("adam_eps", cfg.adam.eps.to_string()),
        ("iters", cfg.iterations.to_string()),
        ("plateau_tol", cfg.plateau_tol.to_string()),
        ("plateau_window", cfg.plateau_window.to_string()),
        ("field_stride", cfg.field_stride.to_string()),
        ("trace_stride", cfg.trace_stride.to_string()),
        ("clip", cfg.clip.to_string()),
        ("seed", cfg.seed.to_string()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let s = parse_config("# sweep\nlambda = 1e-3\n\nfactor=2 # dense\nplateau-tol = 0\n").unwrap();
        assert_eq!(s["lambda"], "1e-3");
        assert_eq!(s["factor"], "2");
        assert_eq!(s["plateau_tol"], "0");
        assert_eq!(parse_config("x\n").unwrap_err().0, 1);
        assert!(parse_config("lambda=1\nbogus = 2\n").unwrap_err().1.contains("bogus"));
    }

    #[test]
    fn apply_validates_and_names_flags() {
        let s = Settings::from([("lambda".into(), "-1".into())]);
        match apply(TaskConfig::denoise(), &s) {
            Err(CliError::Usage(m)) => assert!(m.contains("--lambda"), "{m}"),
            other => panic!("{other:?}"),
        }
        let s = Settings::from([
            ("lambda".into(), "0.002".into()),
            ("ranks".into(), "8,8".into()),
            ("reg".into(), "neurtv".into()),
        ]);
        let cfg = apply(TaskConfig::denoise(), &s).unwrap();
        assert_eq!(cfg.lambda, 0.002);
        assert_eq!(cfg.network.ranks, vec![8, 8]);
        assert_eq!(cfg.scale_mode, None);
        assert_eq!(echo(&cfg)["reg"], "neurtv");
    }
}
