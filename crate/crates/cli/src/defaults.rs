//! `--defaults FILE`: plain `key = value` lines filling flags that were not
//! given on the command line. Explicit flags always win.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        out.push((k.replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

fn leaf<'a>(cmd: &'a Command, m: &'a ArgMatches) -> (&'a Command, &'a ArgMatches) {
    let (mut c, mut m) = (cmd, m);
    while let Some((name, sub)) = m.subcommand() {
        c = c.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    (c, m)
}

/// Extra arguments to append so that file defaults apply to unset flags of
/// the invoked subcommand.
pub fn extra_args(cmd: &Command, matches: &ArgMatches, pairs: &[(String, String)]) -> Result<Vec<OsString>, CliError> {
    let (sub, m) = leaf(cmd, matches);
    let mut extra = Vec::new();
    for (k, v) in pairs {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(k.as_str()))
            .ok_or_else(|| CliError::Usage(format!("defaults file: unknown key `{k}` for `{}`", sub.get_name())))?;
        if m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match v.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{k}").into()),
                "false" | "0" | "no" => {}
                _ => return Err(CliError::Usage(format!("defaults file: `{k}` expects true/false"))),
            },
            _ => extra.push(format!("--{k}={v}").into()),
        }
    }
    Ok(extra)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read defaults file {}: {e}", path.display())))?;
    parse_pairs(&text).map_err(|e| CliError::Usage(format!("defaults file {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_with_comments() {
        let p = parse_pairs("# c\nm = 0.3\n\ncorner_fraction=0.2 # inline\n").unwrap();
        assert_eq!(
            p,
            vec![("m".into(), "0.3".into()), ("corner-fraction".into(), "0.2".into())]
        );
        assert!(parse_pairs("novalue\n").is_err());
    }
}
