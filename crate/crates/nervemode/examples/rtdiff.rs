use std::io::BufReader;
use nervemode::scenarios::solar::{run_solar, SolarConfig};
use nervemode::trace::Trace;
fn main() {
    let trace = run_solar(&SolarConfig::default(), 5, 150).unwrap();
    let mut buffer = Vec::new();
    trace.write_structured(&mut buffer).unwrap();
    let parsed = Trace::read_structured(BufReader::new(buffer.as_slice())).unwrap();
    for (a, b) in trace.records.iter().zip(parsed.records.iter()) {
        if a != b {
            for (sa, sb) in a.systems.iter().zip(b.systems.iter()) {
                if sa != sb {
                    println!("step {} system {}", a.step, sa.id);
                    if sa.scores != sb.scores { println!("scores: {:?}\nvs      {:?}", sa.scores, sb.scores); }
                    if sa.state != sb.state { println!("state: {:?}\nvs     {:?}", sa.state, sb.state); }
                    if sa.truth != sb.truth { println!("truth: {:?}\nvs     {:?}", sa.truth, sb.truth); }
                    return;
                }
            }
            println!("step {} events {:?} vs {:?}", a.step, a.events, b.events);
            return;
        }
    }
    println!("all equal?!");
}
