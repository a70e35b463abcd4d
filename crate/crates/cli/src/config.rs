use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use toml::Value;

/// Expands `--config FILE` into flags. Keys in the file use the flag names
/// (`epochs-max = 32`, `boot = 100`); they are inserted right after the
/// subcommand so that flags given on the command line still win.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(at) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let path = args.get(at + 1).context("--config needs a file path")?.clone();
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.to_string_lossy()))?;

    let mut flags = Vec::new();
    for (key, value) in &table {
        push_flag(&mut flags, key, value)?;
    }

    let mut rest: Vec<OsString> = args[..at].iter().chain(&args[at + 2..]).cloned().collect();
    // Position 0 is the binary, 1 the subcommand.
    let insert_at = rest.len().min(2);
    rest.splice(insert_at..insert_at, flags);
    Ok(rest)
}

fn push_flag(out: &mut Vec<OsString>, key: &str, value: &Value) -> Result<()> {
    let flag = OsString::from(format!("--{key}"));
    match value {
        Value::Boolean(true) => out.push(flag),
        Value::Boolean(false) => {}
        Value::String(s) => out.extend([flag, s.into()]),
        Value::Integer(i) => out.extend([flag, i.to_string().into()]),
        Value::Float(f) => out.extend([flag, format!("{f:e}").into()]),
        Value::Array(items) => {
            for item in items {
                push_flag(out, key, item)?;
            }
        }
        other => bail!("config key `{key}` has unsupported value {other}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn no_config_is_identity() {
        let args = os(&["scalefit", "fit", "--law", "add1"]);
        assert_eq!(expand(args.clone()).unwrap(), args);
    }

    #[test]
    fn config_keys_become_leading_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "law = \"add4\"\nboot = 10\ncontinuous = true\nstrict = false\nC = 5e18\n").unwrap();
        let args = vec![
            "scalefit".into(),
            "allocate".into(),
            "--config".into(),
            path.clone().into_os_string(),
            "--U".into(),
            "2.5e8".into(),
        ];
        let got = expand(args).unwrap();
        assert_eq!(
            got,
            os(&["scalefit", "allocate", "--C", "5e18", "--boot", "10", "--continuous", "--law", "add4", "--U", "2.5e8"])
        );
    }
}
