fn main() {
    let code = grl_forge::cli::run_args(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
