use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fusetile::run(std::env::args_os()).code())
}
