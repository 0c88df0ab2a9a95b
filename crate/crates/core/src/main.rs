fn main() {
    std::process::exit(slotfuse::cli::run());
}
