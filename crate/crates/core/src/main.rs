fn main() {
    // Die quietly on a closed pipe (e.g. piping into `head`) like other
    // unix tools instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(cotplane::cli::run());
}
