fn main() {
    std::process::exit(roadforge_cli::run(std::env::args_os()));
}
