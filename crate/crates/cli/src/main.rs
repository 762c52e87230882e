fn main() {
    std::process::exit(ifad_cli::run(std::env::args_os()));
}
