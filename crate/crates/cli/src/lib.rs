//! Command implementations behind the `dsmis` binary. Each command returns
//! the text destined for stdout; errors carry the process exit code.

pub mod args;
pub mod commands;
pub mod error;
pub mod figure;
pub mod output;
pub mod plot;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Estimate(a) => commands::cmd_estimate(a),
        Command::Bound(a) => commands::cmd_bound(a),
        Command::Island(a) => commands::cmd_island(a),
        Command::Oracle(a) => commands::cmd_oracle(a),
        Command::Figure(a) => figure::cmd_figure(a),
    }
}
