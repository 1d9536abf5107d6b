fn main() {
    std::process::exit(neurtv_cli::run(std::env::args_os()));
}
