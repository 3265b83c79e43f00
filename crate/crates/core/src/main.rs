fn main() {
    std::process::exit(tempo_embed::cli::run(std::env::args_os()));
}
