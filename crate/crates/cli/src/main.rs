use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = hcsync_cli::app::run(std::env::args_os(), &mut io::stdout().lock());
    ExitCode::from(code as u8)
}
