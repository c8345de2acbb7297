fn main() {
    std::process::exit(concept_forge::cli::run());
}
