#pragma once

#include "config.hpp"
#include "output.hpp"
#include "packet.hpp"

#include <iostream>

namespace blochwp {

struct RunOptions {
    std::filesystem::path out = "out";
    int jobs = 1;
    bool verbose = false;
    std::ostream* log = &std::cerr;
};

/// Tables and summary of one experiment; `write` puts them under the output directory.
struct RunResult {
    std::string experiment;
    std::string config_hash;
    std::vector<std::pair<std::string, CsvTable>> tables;
    json summary = json::object();

    const CsvTable& table(const std::string& name) const {
        for (const auto& [n, t] : tables)
            if (n == name) return t;
        fail(ErrorKind::invalid_argument, "no table named " + name);
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        for (const auto& [name, t] : tables) t.write(dir / (name + ".csv"));
        json s = summary;
        s["experiment"] = experiment;
        s["config_hash"] = config_hash;
        write_json(dir / "summary.json", s);
    }
};

namespace detail {

inline void note(const RunOptions& opt, const std::string& msg) {
    if (opt.verbose && opt.log) *opt.log << "[blochwp] " << msg << '\n';
}

inline std::vector<std::string> indexed(const std::string& stem, int n) {
    std::vector<std::string> out;
    for (int i = 1; i <= n; ++i) out.push_back(stem + std::to_string(i));
    return out;
}

template <class... Parts>
std::vector<std::string> columns(Parts&&... parts) {
    std::vector<std::string> out;
    auto add = [&](auto&& p) {
        if constexpr (std::is_convertible_v<decltype(p), std::string>) out.emplace_back(p);
        else out.insert(out.end(), p.begin(), p.end());
    };
    (add(std::forward<Parts>(parts)), ...);
    return out;
}

inline double max_time(const ExperimentConfig& c) {
    double t = c.T;
    if (c.experiment == "ehrenfest")
        for (double c0 : c.C0)
            for (double e : c.epsilons) t = std::max(t, c0 * std::log(1.0 / e));
    return t;
}

} // namespace detail

inline PacketSetup packet_setup(const ExperimentConfig& c) {
    PacketSetup s;
    s.lattice = make_lattice(c);
    s.lattice_potential = make_lattice_potential(c);
    s.potential = make_potential(c);
    s.band = c.band;
    s.cutoff = c.cutoff;
    s.free_band = c.free_band;
    s.q0 = c.q0;
    s.p0 = c.p0;
    s.A = c.envelope.A;
    s.B = c.envelope.B;
    s.sampled_envelope = c.envelope.kind == "sampled" ? c.envelope.samples : std::vector<cplx>{};
    s.horizon = detail::max_time(c);
    s.flow_dt = c.flow_dt;
    s.envelope_dt = c.envelope_dt;
    s.envelope_grid = c.envelope_grid;
    return s;
}

// ---------------------------------------------------------------------------

/// Band-structure scan over the Brillouin zone with a Hellmann-Feynman / Hessian
/// check against centered differences of the energies.
inline RunResult run_bands(const ExperimentConfig& c, const RunOptions& opt = {}) {
    const auto lattice = make_lattice(c);
    const auto pot = make_lattice_potential(c);
    const int d = c.dim();
    auto basis = std::make_shared<const PlaneWaveBasis>(lattice, c.cutoff);
    const auto ks = lattice.brillouin_grid(c.k_points);
    RunResult r{"bands", config_hash(c), {}, {}};
    CsvTable table(r.config_hash, detail::columns(detail::indexed("k", d), detail::indexed("E", c.num_bands),
                                                  std::string("gap_m"), std::string("status")));
    struct Row {
        std::vector<double> e;
        double gap = 0;
        std::string status = "ok";
        double grad_dev = -1, hess_dev = -1;
    };
    std::vector<Row> rows(ks.size());
    auto energies = [&](const Vec& k) {
        const auto pairs = solve_bands(build_bloch_hamiltonian(*basis, pot, k), basis, k, c.num_bands);
        std::vector<double> e;
        for (const auto& p : pairs) e.push_back(p.energy);
        return e;
    };
    run_parallel(ks.size(), opt.jobs, [&](std::size_t i) {
        Row& row = rows[i];
        try {
            row.e = energies(ks[i]);
            const auto m = static_cast<std::size_t>(c.band - 1);
            row.gap = row.e[m + 1] - row.e[m];
            if (m > 0) row.gap = std::min(row.gap, row.e[m] - row.e[m - 1]);
            BandDerivatives der;
            try {
                der = band_derivatives(basis, pot, ks[i], c.band);
            } catch (const Error& e) {
                row.status = "ok; derivative check skipped: " + std::string(e.what());
                return;
            }
            // gradient step 1e-4; the Hessian uses 1e-3 to keep eigenvalue round-off small
            auto shifted = [&](int j, double h) {
                Vec k = ks[i];
                k[j] += h;
                return energies(k)[m];
            };
            for (int j = 0; j < d; ++j) {
                const double hg = 1e-4, hh = 1e-3;
                const double fd_grad = (shifted(j, hg) - shifted(j, -hg)) / (2 * hg);
                const double fd_hess = (shifted(j, hh) - 2 * row.e[m] + shifted(j, -hh)) / (hh * hh);
                row.grad_dev = std::max(row.grad_dev, std::abs(fd_grad - der.grad_E[j]));
                row.hess_dev = std::max(row.hess_dev, std::abs(fd_hess - der.hess_E(j, j)));
            }
        } catch (const Error& e) {
            row.status = std::string(to_string(e.kind())) + ": " + e.what();
        }
    });
    double grad = 0, hess = 0;
    int checked = 0, skipped = 0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        CsvTable::Row row;
        for (int j = 0; j < d; ++j) row << ks[i][j];
        for (int b = 0; b < c.num_bands; ++b)
            row << (rows[i].e.empty() ? std::nan("") : rows[i].e[static_cast<std::size_t>(b)]);
        row << rows[i].gap << rows[i].status;
        table.add(row);
        if (rows[i].grad_dev >= 0) {
            grad = std::max(grad, rows[i].grad_dev);
            hess = std::max(hess, rows[i].hess_dev);
            ++checked;
        } else {
            ++skipped;
        }
    }
    r.tables.emplace_back("bands", std::move(table));
    r.summary["derivative_check"] = {{"method", "centered differences, h = 1e-4 (gradient), 1e-3 (Hessian)"},
                                     {"max_gradient_deviation", grad},
                                     {"max_hessian_deviation", hess},
                                     {"checked_points", checked},
                                     {"skipped_points", skipped}};
    detail::note(opt, "bands: " + std::to_string(ks.size()) + " k-points");
    return r;
}

inline RunResult run_flow(const ExperimentConfig& c, const RunOptions& opt = {}) {
    const PacketModel model(packet_setup(c));
    const int d = c.dim();
    RunResult r{"flow", config_hash(c), {}, {}};
    CsvTable table(r.config_hash,
                   detail::columns(std::string("t"), detail::indexed("q", d), detail::indexed("p", d),
                                   detail::indexed("p_folded", d), std::string("S"), std::string("theta"),
                                   std::string("energy")));
    const auto& traj = model.trajectory();
    for (const auto& s : traj.states()) {
        if (s.t > c.T + 1e-12) break;
        CsvTable::Row row;
        row << s.t;
        for (int j = 0; j < d; ++j) row << s.q[j];
        for (int j = 0; j < d; ++j) row << s.p[j];
        for (int j = 0; j < d; ++j) row << s.p_folded[j];
        row << s.S << s.theta << model.band().energy(s.p) + model.setup().potential->value(s.q);
        table.add(row);
    }
    r.tables.emplace_back("flow", std::move(table));
    r.summary["energy_drift"] = energy_drift(traj, model.band(), *model.setup().potential);
    detail::note(opt, "flow: " + std::to_string(traj.size()) + " nodes");
    return r;
}

/// Gaussian A/B flow and grid propagation side by side at the sample times.
inline RunResult run_envelope(const ExperimentConfig& c, const RunOptions& opt = {}) {
    const PacketModel model(packet_setup(c));
    RunResult r{"envelope", config_hash(c), {}, {}};
    CsvTable table(r.config_hash, {"t", "mass_grid", "grid_vs_gaussian", "symmetry_defect", "min_real_eig",
                                   "inverse_relation_defect", "sigma0", "sigma1", "sigma2", "sigma3"});
    const auto& env0 = model.initial_envelope();
    GridEnvelope u = env0.sampled(c.envelope_grid);
    std::optional<GaussianEnvelope> g = env0.gauss;
    const double mass0 = u.norm();
    double worst_mass = 0, worst_diff = 0;
    std::vector<double> times = c.times;
    std::sort(times.begin(), times.end());
    for (double t : times) {
        u = evolve_grid_envelope(u, model.coefficients(), u.t, t, c.envelope_dt);
        CsvTable::Row row;
        row << t << u.norm();
        worst_mass = std::max(worst_mass, std::abs(u.norm() - mass0));
        if (g) {
            g = evolve_gaussian(*g, model.coefficients(), g->t, t, c.envelope_dt);
            const auto s = sample_envelope(c.envelope_grid, *g);
            std::vector<cplx> diff(u.values.size());
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = u.values[i] - s.values[i];
            const double dn = l2_norm(c.envelope_grid, diff);
            worst_diff = std::max(worst_diff, dn);
            const auto def = gaussian_defects(*g);
            row << dn << def.symmetry << def.min_real_eig << def.inverse_relation;
        } else {
            row << std::nan("") << std::nan("") << std::nan("") << std::nan("");
        }
        for (int k = 0; k <= 3; ++k) {
            try {
                row << sigma_norm(u, k);
            } catch (const Error&) {
                row << std::nan("");
            }
        }
        table.add(row);
    }
    r.tables.emplace_back("envelope", std::move(table));
    r.summary["max_mass_change"] = worst_mass;
    if (g) r.summary["max_grid_vs_gaussian"] = worst_diff;
    detail::note(opt, "envelope: " + std::to_string(times.size()) + " samples");
    return r;
}

/// Synthesized phi^eps and psi_app at the sample times, exported as wave fields.
inline RunResult run_packet(const ExperimentConfig& c, const RunOptions& opt = {}) {
    require(c.dim() == 1, ErrorKind::unsupported_dimension, "packet synthesis is one-dimensional");
    const PacketModel model(packet_setup(c));
    RunResult r{"packet", config_hash(c), {}, {}};
    CsvTable table(r.config_hash, {"epsilon", "t", "norm_phi", "norm_app", "app_minus_phi", "file_phi", "file_app"});
    struct Cell {
        double eps, t, nphi, napp, diff;
        std::string fphi, fapp;
    };
    std::vector<Cell> cells(c.epsilons.size() * c.times.size());
    run_parallel(cells.size(), opt.jobs, [&](std::size_t k) {
        const std::size_t ie = k / c.times.size(), it = k % c.times.size();
        const double eps = c.epsilons[ie], t = c.times[it];
        const auto grid = physical_grid(model.setup().lattice, eps, c.points_per_period, c.physical_half_width);
        const auto env = model.envelope_at(t);
        const auto phi = model.phi(env, eps, grid);
        const auto app = model.app(env, eps, grid);
        const std::string stem = "packet_e" + std::to_string(ie) + "_t" + std::to_string(it);
        write_wavefield(opt.out / (stem + "_phi"), phi);
        write_wavefield(opt.out / (stem + "_app"), app);
        cells[k] = {eps, t, phi.norm(), app.norm(), l2_error(app, phi), stem + "_phi", stem + "_app"};
    });
    for (const auto& cell : cells) {
        CsvTable::Row row;
        row << cell.eps << cell.t << cell.nphi << cell.napp << cell.diff << cell.fphi << cell.fapp;
        table.add(row);
    }
    r.tables.emplace_back("packet", std::move(table));
    detail::note(opt, "packet: " + std::to_string(cells.size()) + " fields");
    return r;
}

namespace detail {
inline GridWaveField initial_wave(const PacketModel& model, const ExperimentConfig& c, double eps,
                                  const PeriodicGrid& grid) {
    const auto env = model.initial_envelope();
    return c.initial_data == "app" ? model.app(env, eps, grid) : model.phi(env, eps, grid);
}
} // namespace detail

/// Reference solutions at the sample times, exported as wave fields.
inline RunResult run_reference(const ExperimentConfig& c, const RunOptions& opt = {}) {
    require(c.dim() == 1, ErrorKind::unsupported_dimension, "reference solves are one-dimensional");
    const PacketModel model(packet_setup(c));
    RunResult r{"reference", config_hash(c), {}, {}};
    CsvTable table(r.config_hash, {"epsilon", "t", "points", "dt", "mass", "mass_change", "file"});
    std::vector<double> times = c.times;
    std::sort(times.begin(), times.end());
    std::vector<std::vector<CsvTable::Row>> rows(c.epsilons.size());
    run_parallel(c.epsilons.size(), opt.jobs, [&](std::size_t ie) {
        const double eps = c.epsilons[ie];
        const auto grid = physical_grid(model.setup().lattice, eps, c.points_per_period, c.physical_half_width);
        const auto psi0 = detail::initial_wave(model, c, eps, grid);
        SolverParams par;
        par.dt_factor = c.reference_dt_factor;
        const auto snaps = solve_nls0(psi0, model.setup().lattice, model.setup().lattice_potential,
                                      *model.setup().potential, times, par);
        for (std::size_t it = 0; it < snaps.size(); ++it) {
            const std::string stem = "reference_e" + std::to_string(ie) + "_t" + std::to_string(it);
            write_wavefield(opt.out / stem, snaps[it]);
            CsvTable::Row row;
            row << eps << snaps[it].time << grid.points << c.reference_dt_factor * eps << snaps[it].norm()
                << snaps[it].norm() - psi0.norm() << stem;
            rows[ie].push_back(row);
        }
    });
    for (const auto& rs : rows)
        for (const auto& row : rs) table.add(row);
    r.tables.emplace_back("reference", std::move(table));
    detail::note(opt, "reference: " + std::to_string(c.epsilons.size()) + " runs");
    return r;
}

/// Error law in epsilon: reference solution against phi^eps / psi_app, or the
/// equation residual of psi_app with and without correctors.
inline RunResult run_convergence(const ExperimentConfig& c, const RunOptions& opt = {}) {
    require(c.dim() == 1, ErrorKind::unsupported_dimension, "convergence studies are one-dimensional");
    require(c.epsilons.size() >= 3, ErrorKind::config, "convergence needs at least three epsilon values");
    const PacketModel model(packet_setup(c));
    const auto& setup = model.setup();
    RunResult r{"convergence", config_hash(c), {}, {}};
    const bool residual = c.comparison == "residual";
    std::vector<double> times = c.times;
    std::sort(times.begin(), times.end());

    struct Cell {
        std::vector<double> err_phi, err_app;
        double res = 0, res_u0 = 0;
        std::string status = "ok";
    };
    std::vector<Cell> cells(c.epsilons.size());
    run_parallel(cells.size(), opt.jobs, [&](std::size_t ie) {
        const double eps = c.epsilons[ie];
        Cell& cell = cells[ie];
        try {
            const auto grid = physical_grid(setup.lattice, eps, c.points_per_period, c.physical_half_width);
            if (residual) {
                const double t = c.residual_time, delta = c.residual_delta * eps;
                const auto env = model.envelope_at(t);
                const auto before = model.envelope_near(env, -delta), after = model.envelope_near(env, delta);
                for (bool corr : {true, false}) {
                    const double v = pde_residual(model.app(before, eps, grid, corr), model.app(env, eps, grid, corr),
                                                  model.app(after, eps, grid, corr), setup.lattice,
                                                  setup.lattice_potential, *setup.potential, model.carrier(t, eps));
                    (corr ? cell.res : cell.res_u0) = v;
                }
            } else {
                const auto psi0 = detail::initial_wave(model, c, eps, grid);
                SolverParams par;
                par.dt_factor = c.reference_dt_factor;
                const auto snaps =
                    solve_nls0(psi0, setup.lattice, setup.lattice_potential, *setup.potential, times, par);
                for (std::size_t it = 0; it < times.size(); ++it) {
                    const auto env = model.envelope_at(times[it]);
                    cell.err_phi.push_back(l2_error(snaps[it], model.phi(env, eps, grid)));
                    cell.err_app.push_back(l2_error(snaps[it], model.app(env, eps, grid)));
                }
            }
        } catch (const Error& e) {
            cell.status = std::string(to_string(e.kind())) + ": " + e.what();
        }
        detail::note(opt, "convergence: epsilon = " + format_number(eps) + " " + cell.status);
    });

    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].status == "ok") ok.push_back(i);
    json failures = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].status != "ok") failures.push_back({{"epsilon", c.epsilons[i]}, {"reason", cells[i].status}});
    r.summary["failures"] = failures;
    r.summary["comparison"] = c.comparison;
    r.summary["initial_data"] = c.initial_data;

    auto fit_of = [&](auto value) {
        std::vector<double> e, v;
        for (std::size_t i : ok) {
            e.push_back(c.epsilons[i]);
            v.push_back(value(cells[i]));
        }
        return fit_log_log(e, v);
    };
    if (residual) {
        CsvTable table(r.config_hash, {"epsilon", "t", "residual", "residual_without_correctors", "status"});
        for (std::size_t i = 0; i < cells.size(); ++i) {
            CsvTable::Row row;
            row << c.epsilons[i] << c.residual_time << cells[i].res << cells[i].res_u0 << cells[i].status;
            table.add(row);
        }
        r.tables.emplace_back("convergence", std::move(table));
        if (ok.size() >= 3) {
            r.summary["residual"] = to_json(fit_of([](const Cell& x) { return x.res; }));
            r.summary["residual_without_correctors"] = to_json(fit_of([](const Cell& x) { return x.res_u0; }));
        }
    } else {
        CsvTable table(r.config_hash, {"epsilon", "t", "error_phi", "error_app", "status"});
        for (std::size_t i = 0; i < cells.size(); ++i)
            for (std::size_t it = 0; it < times.size(); ++it) {
                CsvTable::Row row;
                const bool good = cells[i].status == "ok";
                row << c.epsilons[i] << times[it] << (good ? cells[i].err_phi[it] : std::nan(""))
                    << (good ? cells[i].err_app[it] : std::nan("")) << cells[i].status;
                table.add(row);
            }
        r.tables.emplace_back("convergence", std::move(table));
        if (ok.size() >= 3) {
            json per_time = json::array();
            for (std::size_t it = 0; it < times.size(); ++it)
                per_time.push_back({{"t", times[it]},
                                    {"phi", to_json(fit_of([&](const Cell& x) { return x.err_phi[it]; }))},
                                    {"app", to_json(fit_of([&](const Cell& x) { return x.err_app[it]; }))}});
            r.summary["fits"] = per_time;
        }
    }
    if (ok.size() < 3) {
        r.summary["fit_error"] = "fewer than three epsilon values succeeded";
    }
    return r;
}

/// Error at t = C0 ln(1/eps) for every C0 and epsilon, with a monotonicity flag.
inline RunResult run_ehrenfest(const ExperimentConfig& c, const RunOptions& opt = {}) {
    require(c.dim() == 1, ErrorKind::unsupported_dimension, "Ehrenfest sweeps are one-dimensional");
    const PacketModel model(packet_setup(c));
    const auto& setup = model.setup();
    RunResult r{"ehrenfest", config_hash(c), {}, {}};
    const std::size_t ne = c.epsilons.size();
    std::vector<std::vector<double>> err(c.C0.size(), std::vector<double>(ne, std::nan("")));
    std::vector<std::string> status(ne, "ok");
    run_parallel(ne, opt.jobs, [&](std::size_t ie) {
        const double eps = c.epsilons[ie];
        try {
            const auto grid = physical_grid(setup.lattice, eps, c.points_per_period, c.physical_half_width);
            std::vector<std::pair<double, std::size_t>> order;
            for (std::size_t k = 0; k < c.C0.size(); ++k) order.emplace_back(c.C0[k] * std::log(1.0 / eps), k);
            std::sort(order.begin(), order.end());
            std::vector<double> times;
            for (const auto& o : order) times.push_back(o.first);
            SolverParams par;
            par.dt_factor = c.reference_dt_factor;
            const auto snaps = solve_nls0(detail::initial_wave(model, c, eps, grid), setup.lattice,
                                          setup.lattice_potential, *setup.potential, times, par);
            for (std::size_t j = 0; j < order.size(); ++j)
                err[order[j].second][ie] = l2_error(snaps[j], model.phi(times[j], eps, grid));
        } catch (const Error& e) {
            status[ie] = std::string(to_string(e.kind())) + ": " + e.what();
        }
        detail::note(opt, "ehrenfest: epsilon = " + format_number(eps) + " " + status[ie]);
    });

    // epsilon ordered from largest to smallest
    std::vector<std::size_t> by_eps(ne);
    for (std::size_t i = 0; i < ne; ++i) by_eps[i] = i;
    std::sort(by_eps.begin(), by_eps.end(), [&](std::size_t a, std::size_t b) { return c.epsilons[a] > c.epsilons[b]; });
    CsvTable table(r.config_hash, {"C0", "epsilon", "t", "error", "monotone_in_C0", "status"});
    json mono = json::array();
    for (std::size_t k = 0; k < c.C0.size(); ++k) {
        bool monotone = true;
        for (std::size_t j = 1; j < ne; ++j) {
            const double prev = err[k][by_eps[j - 1]], cur = err[k][by_eps[j]];
            monotone = monotone && std::isfinite(prev) && std::isfinite(cur) && cur < prev;
        }
        mono.push_back({{"C0", c.C0[k]}, {"monotone", monotone}});
        for (std::size_t j = 0; j < ne; ++j) {
            const std::size_t i = by_eps[j];
            CsvTable::Row row;
            row << c.C0[k] << c.epsilons[i] << c.C0[k] * std::log(1.0 / c.epsilons[i]) << err[k][i] << monotone
                << status[i];
            table.add(row);
        }
    }
    r.tables.emplace_back("ehrenfest", std::move(table));
    r.summary["monotone"] = mono;
    return r;
}

inline RunResult run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
    if (c.experiment == "bands") return run_bands(c, opt);
    if (c.experiment == "flow") return run_flow(c, opt);
    if (c.experiment == "envelope") return run_envelope(c, opt);
    if (c.experiment == "packet") return run_packet(c, opt);
    if (c.experiment == "reference") return run_reference(c, opt);
    if (c.experiment == "convergence") return run_convergence(c, opt);
    if (c.experiment == "ehrenfest") return run_ehrenfest(c, opt);
    fail(ErrorKind::config, "unknown experiment kind '" + c.experiment + "'");
}

} // namespace blochwp
