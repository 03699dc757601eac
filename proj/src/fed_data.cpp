#include "fedzmg/fed_data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fedzmg/errors.hpp"
#include "fedzmg/io.hpp"
#include "fedzmg/param_set.hpp"
#include "fedzmg/rng.hpp"

namespace fedzmg {

namespace {

// Separate sub-streams so the eval set can share class means / regression
// weights without depending on how many client draws came before.
constexpr std::uint64_t kMeansStream = 0;
constexpr std::uint64_t kClientStream = 1;

Matrix draw_class_means(const DataRecipe& r) {
    Rng rng = make_stream({r.seed, stream_tag::kData, kMeansStream});
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t rows = r.task == TaskKind::Classification ? r.classes : 1;
    Matrix means(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(r.input_dim));
    for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = normal(rng);
    return means;
}

std::vector<std::size_t> largest_remainder(const std::vector<double>& proportions, std::size_t total) {
    const std::size_t m = proportions.size();
    std::vector<std::size_t> counts(m);
    std::vector<std::pair<double, std::size_t>> rema(m);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        rema[i] = {exact - static_cast<double>(counts[i]), i};
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[rema[i % m].second];
    return counts;
}

std::vector<double> dirichlet(Rng& rng, double alpha, std::size_t k) {
    std::vector<double> p(k);
    if (alpha >= kUniformAlpha) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
        return p;
    }
    std::gamma_distribution<double> gamma(alpha, 1.0);
    double total = 0.0;
    for (auto& v : p) {
        v = gamma(rng);
        total += v;
    }
    if (!(total > 0.0)) {
        // All draws underflowed: place the whole client on one class.
        std::fill(p.begin(), p.end(), 0.0);
        p[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
        return p;
    }
    for (auto& v : p) v /= total;
    return p;
}

MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

std::string client_file_name(std::size_t id) { return "client_" + std::to_string(id) + ".csv"; }

std::string batch_to_csv(const Matrix& x, const Vector& y) {
    std::string out = "label";
    for (Eigen::Index j = 0; j < x.cols(); ++j) out += ",x" + std::to_string(j);
    out += '\n';
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        out += io::format_real(y[i]);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            out += ',';
            out += io::format_real(x(i, j));
        }
        out += '\n';
    }
    return out;
}

Batch batch_from_csv(const std::string& text, const std::string& what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError(what + ": empty file");
    const auto header = io::split(io::trim(line), ',');
    if (header.empty() || header[0] != "label") throw IoError(what + ": header must start with 'label'");
    const std::size_t d = header.size() - 1;
    std::vector<double> feats;
    std::vector<double> labels;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (io::trim(line).empty()) continue;
        const auto cells = io::split(io::trim(line), ',');
        if (cells.size() != d + 1) throw IoError(what + ": row " + std::to_string(row) + " has wrong column count");
        labels.push_back(io::parse_real(cells[0], what));
        for (std::size_t j = 0; j < d; ++j) feats.push_back(io::parse_real(cells[j + 1], what));
        ++row;
    }
    Batch b;
    b.features = Eigen::Map<Matrix>(feats.data(), static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d));
    b.labels = Eigen::Map<Vector>(labels.data(), static_cast<Eigen::Index>(row));
    return b;
}

}  // namespace

void DataRecipe::validate() const {
    if (num_clients < 1) throw RecipeError("num_clients must be >= 1");
    if (input_dim < 1) throw RecipeError("input_dim must be >= 1");
    if (samples_min < 1 || samples_max < samples_min) throw RecipeError("samples_per_client range is invalid");
    if (!(noise_scale >= 0.0) || !(bias_shift_scale >= 0.0)) throw RecipeError("scales must be >= 0");
    if (task == TaskKind::Classification) {
        if (classes < 2) throw RecipeError("classification needs at least 2 classes");
        if (!(dirichlet_alpha > 0.0)) throw RecipeError("dirichlet_alpha must be > 0");
        if (dirichlet_alpha >= kUniformAlpha && samples_min < classes) {
            throw RecipeError("uniform labels requested but samples_per_client (" + std::to_string(samples_min) +
                              ") < classes (" + std::to_string(classes) + ")");
        }
    }
}

std::vector<ClientDataset> generate_federation(const DataRecipe& recipe) {
    recipe.validate();
    const Matrix means = draw_class_means(recipe);
    Rng rng = make_stream({recipe.seed, stream_tag::kData, kClientStream});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> volume(recipe.samples_min, recipe.samples_max);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto d = static_cast<Eigen::Index>(recipe.input_dim);

    std::vector<ClientDataset> clients;
    clients.reserve(recipe.num_clients);
    for (std::size_t k = 0; k < recipe.num_clients; ++k) {
        const std::size_t n = volume(rng);
        // Drawn unconditionally so the label stream does not depend on the
        // shift scale.
        const double shift = recipe.bias_shift_scale * unit(rng);

        ClientDataset c;
        c.client_id = k;
        c.features.resize(static_cast<Eigen::Index>(n), d);
        c.labels.resize(static_cast<Eigen::Index>(n));

        if (recipe.task == TaskKind::Classification) {
            const auto props = dirichlet(rng, recipe.dirichlet_alpha, recipe.classes);
            const auto counts = largest_remainder(props, n);
            std::vector<std::size_t> labels;
            labels.reserve(n);
            for (std::size_t cls = 0; cls < counts.size(); ++cls) labels.insert(labels.end(), counts[cls], cls);
            std::shuffle(labels.begin(), labels.end(), rng);
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                const auto cls = static_cast<Eigen::Index>(labels[i]);
                c.labels[row] = static_cast<double>(labels[i]);
                for (Eigen::Index j = 0; j < d; ++j) {
                    c.features(row, j) = means(cls, j) + recipe.noise_scale * normal(rng) + shift;
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                double y = 0.0;
                for (Eigen::Index j = 0; j < d; ++j) {
                    const double x0 = normal(rng);
                    y += x0 * means(0, j);
                    c.features(row, j) = x0 + shift;
                }
                c.labels[row] = y + recipe.noise_scale * normal(rng);
            }
        }
        clients.push_back(std::move(c));
    }
    return clients;
}

Batch generate_eval_set(const DataRecipe& recipe) {
    recipe.validate();
    const Matrix means = draw_class_means(recipe);
    Rng rng = make_stream({recipe.seed, stream_tag::kEval});
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(recipe.input_dim);

    Batch b;
    if (recipe.task == TaskKind::Classification) {
        constexpr std::size_t per_class = 100;
        const auto n = static_cast<Eigen::Index>(per_class * recipe.classes);
        b.features.resize(n, d);
        b.labels.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index cls = i / static_cast<Eigen::Index>(per_class);
            b.labels[i] = static_cast<double>(cls);
            for (Eigen::Index j = 0; j < d; ++j) b.features(i, j) = means(cls, j) + recipe.noise_scale * normal(rng);
        }
    } else {
        constexpr Eigen::Index n = 1000;
        b.features.resize(n, d);
        b.labels.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double y = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) {
                b.features(i, j) = normal(rng);
                y += b.features(i, j) * means(0, j);
            }
            b.labels[i] = y + recipe.noise_scale * normal(rng);
        }
    }
    return b;
}

std::vector<std::size_t> label_histogram(const ClientDataset& client, std::size_t classes) {
    std::vector<std::size_t> h(classes, 0);
    for (Eigen::Index i = 0; i < client.labels.size(); ++i) {
        const double y = client.labels[i];
        if (!(y >= 0.0) || y >= static_cast<double>(classes) || y != std::floor(y)) {
            throw LabelError("client " + std::to_string(client.client_id) + ": label " + std::to_string(y) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
        ++h[static_cast<std::size_t>(y)];
    }
    return h;
}

double normalized_entropy(const std::vector<std::size_t>& counts) {
    if (counts.size() < 2) return 0.0;
    const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    if (n == 0.0) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(counts.size()));
}

double gini_coefficient(const std::vector<std::size_t>& counts) {
    const double m = static_cast<double>(counts.size());
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    if (counts.empty() || total == 0.0) return 0.0;
    // Sorted form of sum_ij |c_i - c_j|: 2 * sum_i (2i - m + 1) c_(i).
    std::vector<std::size_t> s(counts);
    std::sort(s.begin(), s.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        acc += (2.0 * static_cast<double>(i) - m + 1.0) * static_cast<double>(s[i]);
    }
    const double mean = total / m;
    return 2.0 * acc / (2.0 * m * m * mean);
}

double smoothed_kl(const std::vector<double>& p, const std::vector<double>& q, double smoothing) {
    if (p.size() != q.size() || p.empty()) throw DimensionError("smoothed_kl: distributions differ in support size");
    const double m = static_cast<double>(p.size());
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double ps = (p[i] + smoothing) / (1.0 + m * smoothing);
        const double qs = (q[i] + smoothing) / (1.0 + m * smoothing);
        kl += ps * std::log(ps / qs);
    }
    return std::max(kl, 0.0);
}

HeterogeneityReport heterogeneity_report(const std::vector<ClientDataset>& clients, std::size_t classes,
                                         bool include_kl) {
    if (classes == 0) throw DimensionError("heterogeneity_report: zero classes");
    if (clients.empty()) throw DimensionError("heterogeneity_report: no clients");

    std::vector<std::vector<std::size_t>> hists;
    std::vector<double> pooled(classes, 0.0);
    double pooled_total = 0.0;
    for (const auto& c : clients) {
        hists.push_back(label_histogram(c, classes));
        for (std::size_t i = 0; i < classes; ++i) pooled[i] += static_cast<double>(hists.back()[i]);
        pooled_total += static_cast<double>(c.num_samples());
    }
    for (auto& v : pooled) v /= pooled_total;

    HeterogeneityReport rep;
    std::vector<double> vol, div, ent, gin, kls, dom;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto& h = hists[k];
        const double n = static_cast<double>(clients[k].num_samples());
        ClientHeterogeneity m;
        m.client_id = clients[k].client_id;
        m.volume = clients[k].num_samples();
        m.label_diversity = static_cast<std::size_t>(std::count_if(h.begin(), h.end(), [](auto c) { return c > 0; }));
        m.normalized_entropy = normalized_entropy(h);
        m.gini = gini_coefficient(h);
        m.dominant_class_fraction = n > 0 ? static_cast<double>(*std::max_element(h.begin(), h.end())) / n : 0.0;
        if (include_kl) {
            std::vector<double> p(classes);
            for (std::size_t i = 0; i < classes; ++i) p[i] = n > 0 ? static_cast<double>(h[i]) / n : 0.0;
            m.kl_divergence = smoothed_kl(p, pooled);
            kls.push_back(*m.kl_divergence);
        }
        vol.push_back(static_cast<double>(m.volume));
        div.push_back(static_cast<double>(m.label_diversity));
        ent.push_back(m.normalized_entropy);
        gin.push_back(m.gini);
        dom.push_back(m.dominant_class_fraction);
        rep.per_client.push_back(m);
    }
    rep.volume = summarize(vol);
    rep.label_diversity = summarize(div);
    rep.normalized_entropy = summarize(ent);
    rep.gini = summarize(gin);
    rep.dominant_class_fraction = summarize(dom);
    if (include_kl) rep.kl_divergence = summarize(kls);
    return rep;
}

void export_federation(const std::filesystem::path& dir, const std::vector<ClientDataset>& clients,
                       const Batch* eval) {
    std::filesystem::create_directories(dir);
    std::string manifest = "client_id,n_k,checksum\n";
    for (const auto& c : clients) {
        const std::string body = batch_to_csv(c.features, c.labels);
        io::write_file(dir / client_file_name(c.client_id), body);
        manifest += std::to_string(c.client_id) + "," + std::to_string(c.num_samples()) + "," +
                    io::hex64(fnv1a(body.data(), body.size())) + "\n";
    }
    if (eval != nullptr) io::write_file(dir / "eval.csv", batch_to_csv(eval->features, eval->labels));
    io::write_file(dir / "manifest.csv", manifest);
}

ImportedFederation import_federation(const std::filesystem::path& dir) {
    const std::string manifest = io::read_file(dir / "manifest.csv");
    std::istringstream in(manifest);
    std::string line;
    std::getline(in, line);
    if (io::trim(line) != "client_id,n_k,checksum") throw IoError("manifest.csv: unexpected header");

    ImportedFederation fed;
    while (std::getline(in, line)) {
        if (io::trim(line).empty()) continue;
        const auto cells = io::split(io::trim(line), ',');
        if (cells.size() != 3) throw IoError("manifest.csv: malformed row '" + line + "'");
        const auto id = io::parse_uint(cells[0], "manifest client_id");
        const auto n = io::parse_uint(cells[1], "manifest n_k");
        const std::string body = io::read_file(dir / client_file_name(id));
        const std::string sum = io::hex64(fnv1a(body.data(), body.size()));
        if (sum != cells[2]) {
            throw IoError(client_file_name(id) + ": checksum " + sum + " does not match manifest " + cells[2]);
        }
        Batch b = batch_from_csv(body, client_file_name(id));
        if (b.size() != n) throw IoError(client_file_name(id) + ": row count does not match manifest n_k");
        if (n == 0) throw IoError(client_file_name(id) + ": client holds no samples");
        if (!fed.clients.empty() && b.input_dim() != static_cast<std::size_t>(fed.clients.front().features.cols())) {
            throw IoError(client_file_name(id) + ": input dimension differs from other clients");
        }
        fed.clients.push_back({id, std::move(b.features), std::move(b.labels)});
    }
    if (fed.clients.empty()) throw IoError("manifest.csv lists no clients");
    if (std::filesystem::exists(dir / "eval.csv")) fed.eval = batch_from_csv(io::read_file(dir / "eval.csv"), "eval.csv");
    return fed;
}

}  // namespace fedzmg
