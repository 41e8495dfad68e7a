#include "fedlink/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace fedlink {

namespace {

void check_unit_range(const Matrix& pts) {
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            const double v = pts(i, j);
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
                throw argument_error("feature value out of [0,1] at row " + std::to_string(i) +
                                     " col " + std::to_string(j));
            }
        }
    }
}

uint32_t read_be_u32(std::istream& in, const std::string& path, size_t offset) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) {
        throw format_error(path + ": truncated header at byte offset " + std::to_string(offset));
    }
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error(path + ": cannot open file");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(size);
    if (size > 0) in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw format_error(path + ": short read");
    return buf;
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

Dataset load_idx(const DataSource& src) {
    std::ifstream img(src.images_path, std::ios::binary);
    if (!img) throw format_error(src.images_path + ": cannot open file");
    const uint32_t magic = read_be_u32(img, src.images_path, 0);
    if (magic != kIdxImagesMagic) {
        throw format_error(src.images_path + ": bad idx image magic at byte offset 0, got 0x" +
                           [&] { char b[16]; snprintf(b, sizeof b, "%08x", magic); return std::string(b); }());
    }
    const uint32_t n = read_be_u32(img, src.images_path, 4);
    const uint32_t rows = read_be_u32(img, src.images_path, 8);
    const uint32_t cols = read_be_u32(img, src.images_path, 12);
    const size_t dim = size_t(rows) * size_t(cols);

    std::vector<unsigned char> pixels(size_t(n) * dim);
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!img || img.gcount() != static_cast<std::streamsize>(pixels.size())) {
        const size_t got = img ? static_cast<size_t>(img.gcount()) : 0;
        throw format_error(src.images_path + ": declared " + std::to_string(pixels.size()) +
                           " pixel bytes, file ends at byte offset " + std::to_string(16 + got));
    }
    char extra;
    if (img.read(&extra, 1)) {
        throw format_error(src.images_path + ": trailing bytes beyond declared dimensions at byte offset " +
                           std::to_string(16 + pixels.size()));
    }

    std::ifstream lab(src.labels_path, std::ios::binary);
    if (!lab) throw format_error(src.labels_path + ": cannot open file");
    const uint32_t lmagic = read_be_u32(lab, src.labels_path, 0);
    if (lmagic != kIdxLabelsMagic) {
        throw format_error(src.labels_path + ": bad idx label magic at byte offset 0");
    }
    const uint32_t ln = read_be_u32(lab, src.labels_path, 4);
    if (ln != n) {
        throw format_error(src.labels_path + ": label count " + std::to_string(ln) +
                           " does not match image count " + std::to_string(n));
    }
    std::vector<unsigned char> raw_labels(ln);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(ln));
    if (!lab || lab.gcount() != static_cast<std::streamsize>(ln)) {
        const size_t got = lab ? static_cast<size_t>(lab.gcount()) : 0;
        throw format_error(src.labels_path + ": truncated label payload at byte offset " +
                           std::to_string(8 + got));
    }

    Matrix pts(n, dim);
    for (uint32_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < dim; ++j) {
            pts(i, static_cast<Eigen::Index>(j)) = pixels[size_t(i) * dim + j] / 255.0;
        }
    }
    std::vector<int> labels(raw_labels.begin(), raw_labels.end());
    const int n_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    return Dataset(std::move(pts), std::move(labels), std::max(n_classes, 1),
                   src.name.empty() ? "idx" : src.name);
}

constexpr size_t kCifarRecordBytes = 1 + 3072;

Dataset load_cifar10(const DataSource& src) {
    if (src.batch_paths.empty()) throw argument_error("cifar10-binary: no batch files given");
    std::vector<std::vector<unsigned char>> batches;
    size_t total_records = 0;
    for (const auto& path : src.batch_paths) {
        auto buf = read_file(path);
        if (buf.size() % kCifarRecordBytes != 0) {
            const size_t whole = buf.size() / kCifarRecordBytes;
            throw format_error(path + ": size is not a multiple of " + std::to_string(kCifarRecordBytes) +
                               "-byte records, partial record starts at byte offset " +
                               std::to_string(whole * kCifarRecordBytes));
        }
        total_records += buf.size() / kCifarRecordBytes;
        batches.push_back(std::move(buf));
    }

    Matrix pts(total_records, 3072);
    std::vector<int> labels(total_records);
    size_t row = 0;
    for (const auto& buf : batches) {
        const size_t n = buf.size() / kCifarRecordBytes;
        for (size_t rec = 0; rec < n; ++rec, ++row) {
            const unsigned char* p = buf.data() + rec * kCifarRecordBytes;
            if (p[0] > 9) {
                throw format_error("cifar10-binary: label byte " + std::to_string(int(p[0])) +
                                   " out of range at byte offset " + std::to_string(rec * kCifarRecordBytes));
            }
            labels[row] = p[0];
            for (size_t j = 0; j < 3072; ++j) {
                pts(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = p[1 + j] / 255.0;
            }
        }
    }
    return Dataset(std::move(pts), std::move(labels), 10, src.name.empty() ? "cifar10" : src.name);
}

Dataset load_synthetic_gmm(const DataSource& src) {
    if (src.classes < 1 || src.dim < 1 || src.per_class < 1) {
        throw argument_error("synthetic-gmm: classes, dim and per_class must be positive");
    }
    Rng rng(src.seed);
    Matrix means;
    if (src.means.has_value()) {
        means = *src.means;
        if (means.rows() != src.classes || means.cols() != src.dim) {
            throw argument_error("synthetic-gmm: means shape does not match classes x dim");
        }
    } else if (src.mean_layout == DataSource::MeanLayout::orthogonal) {
        // One coordinate per class: mutually equidistant blobs, so task
        // difficulty does not depend on placement luck.
        if (src.classes > src.dim) {
            throw argument_error("synthetic-gmm: orthogonal layout needs dim >= classes");
        }
        means = Matrix::Constant(src.classes, src.dim, 0.2);
        for (int c = 0; c < src.classes; ++c) means(c, c) = 0.8;
    } else {
        // Blob centers kept away from the borders so sigma-sized clouds
        // mostly survive the [0,1] clamp.
        std::uniform_real_distribution<double> center(0.15, 0.85);
        means.resize(src.classes, src.dim);
        for (int c = 0; c < src.classes; ++c) {
            for (int j = 0; j < src.dim; ++j) means(c, j) = center(rng);
        }
    }

    const int n = src.classes * src.per_class;
    Matrix pts(n, src.dim);
    std::vector<int> labels(n);
    std::normal_distribution<double> noise(0.0, src.sigma);
    int row = 0;
    for (int c = 0; c < src.classes; ++c) {
        for (int i = 0; i < src.per_class; ++i, ++row) {
            for (int j = 0; j < src.dim; ++j) {
                pts(row, j) = std::clamp(means(c, j) + noise(rng), 0.0, 1.0);
            }
            labels[row] = c;
        }
    }
    return Dataset(std::move(pts), std::move(labels), src.classes,
                   src.name.empty() ? "synthetic-gmm" : src.name);
}

}  // namespace

Dataset::Dataset(Matrix points, std::vector<int> labels, int n_classes, std::string name)
    : points_(std::move(points)), labels_(std::move(labels)), n_classes_(n_classes), name_(std::move(name)) {
    if (static_cast<size_t>(points_.rows()) != labels_.size()) {
        throw argument_error("dataset: label count does not match point count");
    }
    check_unit_range(points_);
    for (int l : labels_) {
        if (l < 0 || l >= n_classes_) throw argument_error("dataset: label out of [0, n_classes)");
    }
}

LocalDataset::LocalDataset(int client_id, Matrix points, std::vector<int> labels, int k)
    : client_id_(client_id), points_(std::move(points)), labels_(std::move(labels)), k_(k) {
    if (k_ < 1) throw argument_error("local dataset: k must be >= 1");
    if (static_cast<size_t>(points_.rows()) != labels_.size()) {
        throw argument_error("local dataset: label count does not match point count");
    }
    if (points_.rows() < k_) throw argument_error("local dataset: fewer points than clusters");
    provenance_.assign(labels_.size(), Provenance{});
}

void LocalDataset::set_suspected_clusters(int k) {
    if (k < 1) throw argument_error("suspected cluster count must be >= 1");
    k_ = k;
}

const std::vector<int>& LocalDataset::cluster_assignments() const {
    if (assignments_.empty()) throw state_error("cluster assignments not computed yet");
    return assignments_;
}

void LocalDataset::set_cluster_assignments(std::vector<int> assignments) {
    if (assignments.size() != static_cast<size_t>(points_.rows())) {
        throw argument_error("assignment count does not match point count");
    }
    for (int a : assignments) {
        if (a < 0 || a >= k_) throw argument_error("cluster assignment out of [0, k)");
    }
    assignments_ = std::move(assignments);
}

void LocalDataset::append_points(const Matrix& pts, const std::vector<int>& labels,
                                 const Provenance& tag) {
    if (pts.cols() != points_.cols()) throw argument_error("appended points have wrong dimension");
    if (static_cast<size_t>(pts.rows()) != labels.size()) {
        throw argument_error("appended labels do not match appended points");
    }
    const Eigen::Index old_n = points_.rows();
    points_.conservativeResize(old_n + pts.rows(), Eigen::NoChange);
    points_.bottomRows(pts.rows()) = pts;
    labels_.insert(labels_.end(), labels.begin(), labels.end());
    provenance_.insert(provenance_.end(), static_cast<size_t>(pts.rows()), tag);
    assignments_.clear();  // stale after the data changes
}

void LocalDataset::remove_points(const std::vector<int>& sorted_row_indices) {
    if (sorted_row_indices.empty()) return;
    std::vector<char> drop(static_cast<size_t>(points_.rows()), 0);
    for (int idx : sorted_row_indices) {
        if (idx < 0 || idx >= points_.rows()) throw argument_error("remove index out of range");
        drop[static_cast<size_t>(idx)] = 1;
    }
    const Eigen::Index kept = points_.rows() - static_cast<Eigen::Index>(sorted_row_indices.size());
    Matrix pts(kept, points_.cols());
    std::vector<int> labels;
    std::vector<Provenance> prov;
    std::vector<int> assign;
    labels.reserve(kept);
    prov.reserve(kept);
    Eigen::Index out = 0;
    for (Eigen::Index i = 0; i < points_.rows(); ++i) {
        if (drop[static_cast<size_t>(i)]) continue;
        pts.row(out++) = points_.row(i);
        labels.push_back(labels_[static_cast<size_t>(i)]);
        prov.push_back(provenance_[static_cast<size_t>(i)]);
        if (!assignments_.empty()) assign.push_back(assignments_[static_cast<size_t>(i)]);
    }
    points_ = std::move(pts);
    labels_ = std::move(labels);
    provenance_ = std::move(prov);
    assignments_ = std::move(assign);
}

Dataset load_dataset(const DataSource& source) {
    switch (source.format) {
        case DataSource::Format::idx_images: return load_idx(source);
        case DataSource::Format::cifar10_binary: return load_cifar10(source);
        case DataSource::Format::synthetic_gmm: return load_synthetic_gmm(source);
    }
    throw argument_error("unknown dataset format");
}

std::vector<int> circular_label_set(int client, int n_classes, int classes_per_client) {
    // Window centered on the client index: cpc=3 gives {i-1, i, i+1}.
    const int lo = -((classes_per_client - 1) / 2);
    std::vector<int> labels;
    labels.reserve(classes_per_client);
    for (int o = 0; o < classes_per_client; ++o) {
        int l = (client + lo + o) % n_classes;
        if (l < 0) l += n_classes;
        labels.push_back(l);
    }
    return labels;
}

std::vector<LocalDataset> partition_noniid(const Dataset& ds, const PartitionSpec& spec) {
    const int L = ds.n_classes();
    if (spec.n_clients < 1) throw argument_error("partition: n_clients must be >= 1");
    if (spec.classes_per_client < 1 || spec.classes_per_client > L) {
        throw argument_error("partition: classes_per_client must be in [1, n_classes]");
    }

    Rng rng(spec.seed);

    // Label window per client.
    std::vector<std::vector<int>> client_labels(spec.n_clients);
    if (spec.layout == LabelLayout::circular) {
        for (int i = 0; i < spec.n_clients; ++i) {
            client_labels[i] = circular_label_set(i, L, spec.classes_per_client);
        }
    } else {
        std::vector<int> all(L);
        std::iota(all.begin(), all.end(), 0);
        for (int i = 0; i < spec.n_clients; ++i) {
            std::vector<int> pool = all;
            std::shuffle(pool.begin(), pool.end(), rng);
            client_labels[i].assign(pool.begin(), pool.begin() + spec.classes_per_client);
            std::sort(client_labels[i].begin(), client_labels[i].end());
        }
    }

    // Claimants per class, in client order.
    std::vector<std::vector<int>> claimants(L);
    for (int i = 0; i < spec.n_clients; ++i) {
        for (int l : client_labels[i]) claimants[l].push_back(i);
    }

    // Class -> point indices.
    const auto& labels = ds.labels_for_eval();
    std::vector<std::vector<int>> by_class(L);
    for (int i = 0; i < ds.n(); ++i) by_class[labels[static_cast<size_t>(i)]].push_back(i);

    // Equal per-client-per-class quota: the smallest even share over all
    // claimed classes. Keeps client sizes equal and classes balanced within
    // a client; leftover points are simply not drawn.
    int quota = std::numeric_limits<int>::max();
    for (int l = 0; l < L; ++l) {
        if (claimants[l].empty()) continue;
        quota = std::min(quota, static_cast<int>(by_class[l].size() / claimants[l].size()));
    }
    if (quota == std::numeric_limits<int>::max()) quota = 0;
    if (quota < 1) {
        throw argument_error("partition: infeasible, some class has fewer points than claimants");
    }

    std::vector<std::vector<int>> rows_per_client(spec.n_clients);
    for (int l = 0; l < L; ++l) {
        if (claimants[l].empty()) continue;
        std::vector<int> pool = by_class[l];
        std::shuffle(pool.begin(), pool.end(), rng);
        int cursor = 0;
        for (int c : claimants[l]) {
            for (int t = 0; t < quota; ++t) rows_per_client[c].push_back(pool[cursor++]);
        }
    }

    std::vector<LocalDataset> out;
    out.reserve(spec.n_clients);
    for (int i = 0; i < spec.n_clients; ++i) {
        auto& rows = rows_per_client[i];
        std::sort(rows.begin(), rows.end());
        Matrix pts(rows.size(), ds.dim());
        std::vector<int> lab(rows.size());
        for (size_t r = 0; r < rows.size(); ++r) {
            pts.row(static_cast<Eigen::Index>(r)) = ds.points().row(rows[r]);
            lab[r] = labels[static_cast<size_t>(rows[r])];
        }
        out.emplace_back(i, std::move(pts), std::move(lab), spec.classes_per_client);
    }
    return out;
}

TrustMatrix build_trust_matrix(int owner, int n_clients, int k_owner,
                               const TrustPolicy& policy, uint64_t seed) {
    if (owner < 0 || owner >= n_clients) throw argument_error("trust: owner out of range");
    if (k_owner < 1) throw argument_error("trust: k must be >= 1");
    if (policy.kind == TrustPolicy::Kind::bernoulli && (policy.p < 0.0 || policy.p > 1.0)) {
        throw argument_error("trust: bernoulli p must be in [0,1]");
    }

    TrustMatrix tm;
    tm.owner = owner;
    tm.entries = Eigen::MatrixXi::Zero(n_clients, k_owner);
    Rng rng(seed);
    std::bernoulli_distribution coin(policy.kind == TrustPolicy::Kind::bernoulli ? policy.p : 1.0);
    for (int i = 0; i < n_clients; ++i) {
        if (i == owner) continue;  // self row stays 0
        for (int m = 0; m < k_owner; ++m) {
            switch (policy.kind) {
                case TrustPolicy::Kind::full: tm.entries(i, m) = 1; break;
                case TrustPolicy::Kind::bernoulli: tm.entries(i, m) = coin(rng) ? 1 : 0; break;
                case TrustPolicy::Kind::deny_list: tm.entries(i, m) = 1; break;
            }
        }
    }
    if (policy.kind == TrustPolicy::Kind::deny_list) {
        for (auto [receiver, cluster] : policy.denied) {
            if (receiver < 0 || receiver >= n_clients || cluster < 0 || cluster >= k_owner) {
                throw argument_error("trust: deny entry out of range");
            }
            tm.entries(receiver, cluster) = 0;
        }
    }
    return tm;
}

int diversity(const LocalDataset& ld, int threshold) {
    const auto& assign = ld.cluster_assignments();  // throws state_error if unset
    std::vector<int> counts(static_cast<size_t>(ld.suspected_clusters()), 0);
    for (int a : assign) {
        if (a >= 0 && a < ld.suspected_clusters()) counts[static_cast<size_t>(a)]++;
    }
    int n = 0;
    for (int c : counts) {
        if (c > threshold) ++n;
    }
    return n;
}

}  // namespace fedlink
