//! Scratch probe: place and route the sparse benchmark kernels and print
//! the first error each hits.

use cascade_core::{
    build_routing_graph, ensure_input_fifos, load_arch_file, parse_app, place, route, PnrParams,
};

fn main() {
    let arch = std::fs::read_to_string("benchmarks/arch_16x8.json").unwrap();
    let (spec, _) = load_arch_file(&arch).unwrap();
    let rgraph = build_routing_graph(&spec).unwrap();
    for name in ["sparse_vecadd", "sparse_ewmul", "sparse_ttv"] {
        let text = std::fs::read_to_string(format!("benchmarks/{name}.json")).unwrap();
        let g0 = parse_app(&text).unwrap();
        let (g, added) = ensure_input_fifos(&g0, 2);
        let params = PnrParams {
            seed: 1,
            moves_per_temp: Some(150),
            route_iter_limit: 120,
            ..PnrParams::default()
        };
        print!("{name}: +{added} fifos, ");
        let placement = match place(&g, &spec, &params) {
            Ok((p, _)) => p,
            Err(e) => {
                println!("place error: {e}");
                continue;
            }
        };
        if name == "sparse_ttv" {
            let mut locs: Vec<String> = placement
                .loc
                .iter()
                .map(|(n, at)| format!("{n}@{at}"))
                .collect();
            locs.sort();
            println!("\n  {}", locs.join(" "));
        }
        match route(&g, &placement, &spec, &rgraph, &params) {
            Ok((r, _)) => println!(
                "routed, {} nets, {} valid, {} ready",
                r.routes.len(),
                r.valid_routes.len(),
                r.ready_routes.len()
            ),
            Err(e) => println!("route error: {e}"),
        }
    }
}
