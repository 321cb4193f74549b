fn main() {
    std::process::exit(agcm::cli::main_entry());
}
