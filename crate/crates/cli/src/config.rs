//! Folds a `key = value` config file into the argument list, so file
//! values act like flags the user did not type.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command, CommandFactory, FromArgMatches};

use crate::args::Cli;

/// Parses `argv`, filling every flag left unset on the command line from
/// the `--config` file when one is given.
pub fn parse(argv: Vec<OsString>) -> anyhow::Result<Cli> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(&argv)?;
    let Some(path) = first.get_one::<PathBuf>("config").cloned() else {
        return Ok(Cli::from_arg_matches(&first)?);
    };
    let kv = coclick::config::load_key_values(&path)
        .map_err(|e| anyhow::anyhow!("config: {}: {e}", path.display()))?;
    let (sub_name, sub_matches) = first.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(sub_name).expect("parsed subcommand exists");

    let mut global_extra = Vec::new();
    let mut sub_extra = Vec::new();
    for (key, value) in kv {
        let id = key.replace('-', "_");
        if id == "config" {
            continue;
        }
        if let Some(tokens) = tokens_for(sub_cmd, sub_matches, &id, &value)? {
            sub_extra.extend(tokens);
        } else if let Some(tokens) = tokens_for(&cmd, &first, &id, &value)? {
            global_extra.extend(tokens);
        } else {
            log::warn!("config key {key:?} is not used by {sub_name}");
        }
    }

    let pos = argv
        .iter()
        .position(|a| a.to_str() == Some(sub_name))
        .expect("subcommand appears in argv");
    let mut merged: Vec<OsString> = argv[..1].to_vec();
    merged.extend(global_extra.into_iter().map(OsString::from));
    merged.extend(argv[1..=pos].iter().cloned());
    merged.extend(sub_extra.into_iter().map(OsString::from));
    merged.extend(argv[pos + 1..].iter().cloned());
    let matches = cmd.try_get_matches_from(merged)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

/// Flag tokens for one file entry: `None` when `cmd` has no such argument,
/// empty when the command line already set it.
fn tokens_for(cmd: &Command, m: &ArgMatches, id: &str, value: &str) -> anyhow::Result<Option<Vec<String>>> {
    let Some(arg) = cmd.get_arguments().find(|a| a.get_id() == id && a.get_long().is_some()) else {
        return Ok(None);
    };
    if m.value_source(id) == Some(ValueSource::CommandLine) {
        return Ok(Some(Vec::new()));
    }
    let long = arg.get_long().expect("checked above");
    if arg.get_action().takes_values() {
        return Ok(Some(vec![format!("--{long}={value}")]));
    }
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(Some(vec![format!("--{long}")])),
        "false" | "no" | "0" => Ok(Some(Vec::new())),
        _ => Err(clap::Error::raw(
            clap::error::ErrorKind::InvalidValue,
            format!("config key {id:?} expects true or false, got {value:?}\n"),
        )
        .into()),
    }
}
