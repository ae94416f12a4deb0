//! Flat `key = value` run configuration files.
//!
//! Keys are flag names without the leading dashes. A file is turned into
//! flags placed before the command-line flags, so the command line wins.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {raw:?}", i + 1);
        };
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Flags for the pairs; boolean switches are written as `key = true`.
pub fn to_flags(pairs: &[(String, String)]) -> Vec<String> {
    let mut flags = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => flags.push(format!("--{k}")),
            "false" => {}
            _ => {
                flags.push(format!("--{k}"));
                flags.push(v.clone());
            }
        }
    }
    flags
}

pub fn load(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let pairs = parse(&text).with_context(|| format!("in config {}", path.display()))?;
    Ok(to_flags(&pairs))
}

/// Expands `--config FILE` (or `--config=FILE`) into the file's flags,
/// inserted right after the subcommand so later command-line flags
/// override them.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            match iter.next() {
                Some(p) => path = Some(p),
                None => bail!("--config needs a file"),
            }
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let flags = load(Path::new(&path))?;
    // program name, subcommand, then file flags
    let split = rest.len().min(2);
    let mut out: Vec<String> = rest[..split].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let p = parse("# run\nkappa = 5\n\nlambda_vis=0.2 # lighter\nparallel = true\n").unwrap();
        assert_eq!(
            p,
            vec![
                ("kappa".into(), "5".into()),
                ("lambda-vis".into(), "0.2".into()),
                ("parallel".into(), "true".into())
            ]
        );
        assert_eq!(
            to_flags(&p),
            ["--kappa", "5", "--lambda-vis", "0.2", "--parallel"]
        );
        assert!(parse("kappa 5").is_err());
    }
}
