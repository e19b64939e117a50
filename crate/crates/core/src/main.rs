fn main() {
    let code = fibersr::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
