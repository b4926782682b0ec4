fn main() {
    std::process::exit(skelcloud_cli::run(std::env::args_os()));
}
