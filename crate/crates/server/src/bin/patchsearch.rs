fn main() {
    std::process::exit(patchsearch_server::cli::main());
}
