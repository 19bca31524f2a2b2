fn main() {
    std::process::exit(graphon_hawkes::cli::run(std::env::args_os()));
}
