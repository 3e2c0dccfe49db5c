fn main() {
    let code = adcopy::cli::run(std::env::args_os());
    std::process::exit(code);
}
