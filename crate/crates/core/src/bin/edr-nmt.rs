fn main() {
    let code = edr_nmt::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
