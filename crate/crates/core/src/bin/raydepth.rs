fn main() {
    std::process::exit(raydepth::cli::run(std::env::args_os()));
}
