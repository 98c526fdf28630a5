//! `key = value` configuration files and `--set key=value` overrides.

use crate::error::CliError;
use efdr::pipeline::TrainConfig;
use std::fs;
use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored.
pub fn parse_settings(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin} line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Config(format!("{origin} line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_settings(&text, &path.display().to_string())
}

pub fn parse_override(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Defaults, then the file, then each `--set`, in order.
pub fn build_config(file: Option<&Path>, sets: &[String]) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    let mut settings = match file {
        Some(p) => read_settings(p)?,
        None => Vec::new(),
    };
    for s in sets {
        settings.push(parse_override(s)?);
    }
    for (k, v) in settings {
        if !TrainConfig::is_key(&k) {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blanks_and_spacing() {
        let s = parse_settings("# header\n\nlr = 0.001  # inline\n epochs=3\n", "t").unwrap();
        assert_eq!(s, vec![("lr".into(), "0.001".into()), ("epochs".into(), "3".into())]);
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        assert!(matches!(parse_settings("lr 0.1", "t"), Err(CliError::Config(_))));
        assert!(matches!(parse_settings(" = 3", "t"), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "epochs = 7\nheads = 4\n").unwrap();
        let cfg = build_config(Some(&p), &["epochs=9".into()]).unwrap();
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.model.heads, 4);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = build_config(None, &["learning_rate=1".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
