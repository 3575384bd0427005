#include "imageflow/evaluation.hpp"

#include "imageflow/error.hpp"
#include "imageflow/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace imageflow {

void SegmenterConfig::validate() const {
    if (base_channels < 1) throw ConfigError("segmenter: base_channels must be positive");
    if (channel_multipliers.empty()) throw ConfigError("segmenter: channel_multipliers must be non-empty");
    if (epochs < 0) throw ConfigError("segmenter: epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("segmenter: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("segmenter: learning_rate must be positive");
}

namespace {

torch::Tensor logits_of(UNet& net, const torch::Tensor& x) { return net->decode(net->encode(x)); }

}  // namespace

Segmenter::Segmenter(int in_channels, int image_size, const SegmenterConfig& config) {
    config.validate();
    BackboneConfig bb;
    bb.in_channels = in_channels;
    bb.base_channels = config.base_channels;
    bb.channel_multipliers = config.channel_multipliers;
    bb.blocks_per_resolution = 1;
    bb.image_size = image_size;
    bb.sigmoid_output = false;
    bb.output_channels = 1;
    net_ = UNet(bb);
}

torch::Tensor Segmenter::probabilities(const Image& x) {
    if (!net_) throw ConfigError("segmenter is not initialized");
    torch::NoGradGuard guard;
    net_->eval();
    const bool single = x.dim() == 3;
    auto logits = logits_of(net_, single ? x.unsqueeze(0) : x).squeeze(1);
    auto p = torch::sigmoid(logits);
    return single ? p.squeeze(0) : p;
}

Mask Segmenter::segment(const Image& x) { return probabilities(x) > 0.5; }

Segmenter train_segmenter(const Dataset& dataset, const SegmenterConfig& config,
                          const std::function<void(const std::string&)>& log) {
    config.validate();
    std::vector<Image> xs;
    std::vector<Mask> ms;
    for (const auto* s : dataset.in_split(Split::train)) {
        if (!s->masks) continue;
        for (std::size_t k = 0; k < s->size(); ++k) {
            xs.push_back(s->images[k]);
            ms.push_back((*s->masks)[k]);
        }
    }
    if (xs.empty()) throw ConfigError("segmenter: the train split carries no masks");
    torch::manual_seed(derive_seed(config.seed, {0x5e6}));
    Segmenter seg(static_cast<int>(xs[0].size(0)), static_cast<int>(xs[0].size(-1)), config);
    auto& net = seg.net();
    net->train();
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto images = torch::stack(xs);
    auto masks = torch::stack(ms).to(torch::kFloat32).unsqueeze(1);
    const auto n = static_cast<std::int64_t>(xs.size());
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(config.seed, {1, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        int batches = 0;
        for (std::int64_t b = 0; b < n; b += config.batch_size) {
            const auto e = std::min<std::int64_t>(n, b + config.batch_size);
            auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + e), torch::kLong);
            auto x = images.index_select(0, idx);
            auto y = masks.index_select(0, idx);
            if (rng() & 1) {
                x = x.flip({-1});
                y = y.flip({-1});
            }
            if (rng() & 1) {
                x = x.flip({-2});
                y = y.flip({-2});
            }
            opt.zero_grad();
            auto loss = torch::binary_cross_entropy_with_logits(logits_of(net, x), y);
            loss.backward();
            opt.step();
            sum += loss.item<double>();
            ++batches;
        }
        if (log) log("segmenter epoch " + std::to_string(epoch) + " bce " + std::to_string(sum / batches));
    }
    net->eval();
    return seg;
}

std::vector<EvalPair> evaluation_pairs(const Dataset& dataset, Split split, std::size_t min_history) {
    if (min_history < 1) throw ConfigError("evaluation_pairs: min_history must be >= 1");
    std::vector<EvalPair> out;
    for (const auto* s : dataset.in_split(split)) {
        for (std::size_t j = min_history; j < s->size(); ++j) {
            EvalPair p;
            p.series_id = s->series_id;
            p.i = j - 1;
            p.j = j;
            p.x_i = s->images[j - 1];
            p.x_j = s->images[j];
            p.t_i = s->times[j - 1];
            p.t_j = s->times[j];
            p.history.assign(s->images.begin(), s->images.begin() + static_cast<std::ptrdiff_t>(j));
            p.history_times.assign(s->times.begin(), s->times.begin() + static_cast<std::ptrdiff_t>(j));
            if (s->masks) {
                p.mask_i = (*s->masks)[j - 1];
                p.mask_j = (*s->masks)[j];
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::string pair_list_hash(const std::vector<EvalPair>& pairs) {
    std::string key;
    for (const auto& p : pairs) key += p.series_id + ":" + std::to_string(p.i) + ":" + std::to_string(p.j) + ";";
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << hash_string(key);
    return os.str();
}

std::string to_string(Subset s) {
    switch (s) {
        case Subset::all: return "all";
        case Subset::minor_growth: return "minor_growth";
        case Subset::major_growth: return "major_growth";
    }
    return "all";
}

std::vector<bool> subset_split(const std::vector<EvalPair>& pairs, Segmenter* segmenter) {
    std::vector<bool> major;
    major.reserve(pairs.size());
    for (const auto& p : pairs) {
        Mask a, b;
        if (p.mask_i && p.mask_j) {
            a = *p.mask_i;
            b = *p.mask_j;
        } else {
            if (!segmenter || !segmenter->defined())
                throw ConfigError("subset_split: pair " + p.series_id + " has no masks and no segmenter was given");
            a = segmenter->segment(p.x_i);
            b = segmenter->segment(p.x_j);
        }
        major.push_back(dice(a, b) < 0.9);
    }
    return major;
}

bool higher_is_better(const std::string& metric) {
    return metric == "psnr" || metric == "ssim" || metric == "dice";
}

double metric_value(const PairMetrics& m, const std::string& metric) {
    if (metric == "psnr") return m.psnr;
    if (metric == "ssim") return m.ssim;
    if (metric == "mae") return m.mae;
    if (metric == "mse") return m.mse;
    if (metric == "dice") return m.dice;
    if (metric == "hd") return m.hd;
    throw ConfigError("unknown metric '" + metric + "'");
}

PairMetrics score_prediction(const Image& prediction, const Image& truth, Segmenter& segmenter,
                             const MetricConfig& config) {
    check_same_shape(prediction, truth, "score_prediction");
    PairMetrics m;
    m.psnr = psnr(prediction, truth, config);
    m.ssim = ssim(prediction, truth, config);
    m.mae = mae(prediction, truth);
    m.mse = mse(prediction, truth);
    auto mp = segmenter.segment(prediction);
    auto mt = segmenter.segment(truth);
    m.dice = dice(mp, mt);
    m.hd = hausdorff(mp, mt, config);
    return m;
}

const MetricSummary& EvalReport::at(const std::string& method, Subset subset, const std::string& metric) const {
    auto mi = table.find(method);
    if (mi == table.end()) throw ConfigError("report has no method '" + method + "'");
    return mi->second.at(to_string(subset)).at(metric);
}

std::vector<double> mean_ranks(const std::vector<std::vector<double>>& cells, const std::vector<bool>& higher_better) {
    if (cells.size() != higher_better.size()) throw ShapeError("mean_ranks: one direction flag per cell required");
    const std::size_t m = cells.empty() ? 0 : cells[0].size();
    std::vector<double> sum(m, 0.0);
    std::size_t used = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& v = cells[c];
        if (v.size() != m) throw ShapeError("mean_ranks: ragged cells");
        if (std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); })) continue;
        for (std::size_t a = 0; a < m; ++a) {
            // rank = 1 + #strictly better + (#ties - 1) / 2
            double better = 0.0, ties = 0.0;
            for (std::size_t b = 0; b < m; ++b) {
                if (b == a) continue;
                if (v[b] == v[a]) ties += 1.0;
                else if (higher_better[c] ? v[b] > v[a] : v[b] < v[a]) better += 1.0;
            }
            sum[a] += 1.0 + better + ties / 2.0;
        }
        ++used;
    }
    if (used == 0) return std::vector<double>(m, std::numeric_limits<double>::quiet_NaN());
    for (auto& s : sum) s /= static_cast<double>(used);
    return sum;
}

void rank_methods(EvalReport& report) {
    std::vector<std::vector<double>> cells;
    std::vector<bool> dirs;
    for (auto subset : {Subset::all, Subset::minor_growth, Subset::major_growth}) {
        for (const auto& metric : metric_names()) {
            std::vector<double> row;
            for (const auto& method : report.methods) {
                const auto& s = report.at(method, subset, metric);
                row.push_back(s.n_pairs == 0 ? std::numeric_limits<double>::quiet_NaN() : s.mean);
            }
            cells.push_back(std::move(row));
            dirs.push_back(higher_is_better(metric));
        }
    }
    auto r = mean_ranks(cells, dirs);
    report.rank.clear();
    for (std::size_t k = 0; k < report.methods.size(); ++k) report.rank[report.methods[k]] = r[k];
}

EvalReport build_report(const std::vector<std::string>& methods,
                        const std::map<std::string, std::vector<std::vector<PairMetrics>>>& per_seed,
                        const std::vector<bool>& major, const std::string& pair_hash) {
    EvalReport rep;
    rep.methods = methods;
    rep.pair_hash = pair_hash;
    rep.n_all = major.size();
    rep.n_major = static_cast<std::size_t>(std::count(major.begin(), major.end(), true));
    rep.n_minor = rep.n_all - rep.n_major;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& method : methods) {
        auto it = per_seed.find(method);
        if (it == per_seed.end() || it->second.empty()) throw ConfigError("build_report: no results for " + method);
        const auto& seeds = it->second;
        rep.seeds = seeds.size();
        for (const auto& run : seeds)
            if (run.size() != major.size())
                throw ShapeError("build_report: method " + method + " was not scored on the shared pair list");
        for (auto subset : {Subset::all, Subset::minor_growth, Subset::major_growth}) {
            auto in_subset = [&](std::size_t k) {
                return subset == Subset::all || (subset == Subset::major_growth) == major[k];
            };
            const std::size_t count = subset == Subset::all ? rep.n_all
                                      : subset == Subset::major_growth ? rep.n_major
                                                                        : rep.n_minor;
            for (const auto& metric : metric_names()) {
                std::vector<double> seed_means;
                for (const auto& run : seeds) {
                    double s = 0.0;
                    std::size_t n = 0;
                    for (std::size_t k = 0; k < run.size(); ++k) {
                        if (!in_subset(k)) continue;
                        const double v = metric_value(run[k], metric);
                        if (std::isnan(v)) continue;
                        s += v;
                        ++n;
                    }
                    seed_means.push_back(n ? s / static_cast<double>(n) : nan);
                }
                MetricSummary ms;
                ms.n_pairs = count;
                double mean = 0.0;
                for (double v : seed_means) mean += v;
                mean /= static_cast<double>(seed_means.size());
                double var = 0.0;
                for (double v : seed_means) var += (v - mean) * (v - mean);
                ms.mean = mean;
                ms.std = seed_means.size() > 1 ? std::sqrt(var / static_cast<double>(seed_means.size() - 1)) : 0.0;
                rep.table[method][to_string(subset)][metric] = ms;
            }
        }
    }
    rank_methods(rep);
    return rep;
}

EvalReport evaluate_methods(const std::vector<EvalPair>& pairs, const std::vector<std::string>& methods,
                            const std::map<std::string, std::vector<Forecaster>>& forecasters,
                            Segmenter& segmenter, const MetricConfig& config) {
    if (pairs.empty()) throw ConfigError("evaluate: no evaluation pairs");
    if (methods.empty()) throw ConfigError("evaluate: no methods");
    std::map<std::string, std::vector<std::vector<PairMetrics>>> scores;
    for (const auto& method : methods) {
        auto it = forecasters.find(method);
        if (it == forecasters.end() || it->second.empty()) throw ConfigError("evaluate: no forecaster for " + method);
        for (const auto& f : it->second) {
            std::vector<PairMetrics> run;
            run.reserve(pairs.size());
            for (const auto& p : pairs) run.push_back(score_prediction(f(p), p.x_j, segmenter, config));
            scores[method].push_back(std::move(run));
        }
    }
    return build_report(methods, scores, subset_split(pairs, &segmenter), pair_list_hash(pairs));
}

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "method,subset,metric,mean,std,n_pairs\n";
    for (const auto& method : methods)
        for (auto subset : {Subset::all, Subset::minor_growth, Subset::major_growth})
            for (const auto& metric : metric_names()) {
                const auto& s = at(method, subset, metric);
                os << method << ',' << to_string(subset) << ',' << metric << ',' << num(s.mean) << ',' << num(s.std)
                   << ',' << s.n_pairs << '\n';
            }
    return os.str();
}

std::string EvalReport::ranks_csv() const {
    std::ostringstream os;
    os << "method,mean_rank\n";
    for (const auto& method : methods) os << method << ',' << num(rank.at(method)) << '\n';
    return os.str();
}

std::string EvalReport::to_json() const {
    auto val = [](double v) -> nlohmann::json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    nlohmann::json j;
    j["methods"] = methods;
    j["seeds"] = seeds;
    j["pair_list_hash"] = pair_hash;
    j["n_pairs"] = {{"all", n_all}, {"minor_growth", n_minor}, {"major_growth", n_major}};
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& method : methods)
        for (auto subset : {Subset::all, Subset::minor_growth, Subset::major_growth})
            for (const auto& metric : metric_names()) {
                const auto& s = at(method, subset, metric);
                rows.push_back({{"method", method},
                                {"subset", to_string(subset)},
                                {"metric", metric},
                                {"mean", val(s.mean)},
                                {"std", val(s.std)},
                                {"n_pairs", s.n_pairs}});
            }
    for (const auto& method : methods) j["rank"][method] = val(rank.at(method));
    return j.dump(2);
}

}  // namespace imageflow
