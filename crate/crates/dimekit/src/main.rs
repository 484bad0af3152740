fn main() {
    std::process::exit(dimekit::cli::main_entry());
}
