#![no_main]
use ftncfm::toyworld::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        // A line that parses must survive a write/parse round trip.
        if let Ok(sample) = io::parse_line(line) {
            let text = io::to_line(&sample, true).expect("parsed sample must serialize");
            assert_eq!(io::parse_line(&text).expect("serialized sample must parse"), sample);
        }
    }
});
