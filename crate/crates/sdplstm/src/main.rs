fn main() {
    std::process::exit(sdplstm::cli::run());
}
