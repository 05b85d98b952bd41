fn main() {
    voxrestore::bench::retain_freed_memory();
    let code = voxrestore::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
