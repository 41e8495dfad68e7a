#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fedlink/datastore.hpp"

using namespace fedlink;

namespace {

// Minimal idx writers for loader tests.
void write_be_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_idx_images(const std::string& path, uint32_t n, uint32_t rows, uint32_t cols,
                      const std::vector<unsigned char>& pixels, uint32_t magic = 0x00000803) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    write_be_u32(out, magic);
    write_be_u32(out, n);
    write_be_u32(out, rows);
    write_be_u32(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels,
                      uint32_t magic = 0x00000801) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    write_be_u32(out, magic);
    write_be_u32(out, static_cast<uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

DataSource synthetic_source(int classes, int dim, int per_class, uint64_t seed) {
    DataSource src;
    src.format = DataSource::Format::synthetic_gmm;
    src.classes = classes;
    src.dim = dim;
    src.per_class = per_class;
    src.seed = seed;
    return src;
}

LocalDataset make_clustered(int k, const std::vector<int>& sizes) {
    int n = 0;
    for (int s : sizes) n += s;
    Matrix pts = Matrix::Constant(n, 2, 0.5);
    std::vector<int> labels(static_cast<size_t>(n), 0);
    LocalDataset ld(0, pts, labels, k);
    std::vector<int> assign;
    for (size_t c = 0; c < sizes.size(); ++c) {
        assign.insert(assign.end(), static_cast<size_t>(sizes[c]), static_cast<int>(c));
    }
    ld.set_cluster_assignments(assign);
    return ld;
}

}  // namespace

TEST_CASE("synthetic gmm matches requested shape with balanced labels") {
    Dataset ds = load_dataset(synthetic_source(4, 16, 50, 7));
    CHECK(ds.n() == 200);
    CHECK(ds.dim() == 16);
    std::map<int, int> counts;
    for (int l : ds.labels_for_eval()) counts[l]++;
    CHECK(counts.size() == 4);
    for (const auto& [label, count] : counts) {
        CHECK(label >= 0);
        CHECK(label < 4);
        CHECK(count == 50);
    }
    CHECK(ds.points().minCoeff() >= 0.0);
    CHECK(ds.points().maxCoeff() <= 1.0);
}

TEST_CASE("synthetic gmm is deterministic under seed") {
    Dataset a = load_dataset(synthetic_source(3, 8, 20, 99));
    Dataset b = load_dataset(synthetic_source(3, 8, 20, 99));
    CHECK(a.points() == b.points());
    CHECK(a.labels_for_eval() == b.labels_for_eval());
}

TEST_CASE("orthogonal mean layout puts each class on its own coordinate") {
    DataSource src = synthetic_source(4, 8, 10, 1);
    src.mean_layout = DataSource::MeanLayout::orthogonal;
    src.sigma = 1e-4;
    Dataset ds = load_dataset(src);
    for (int i = 0; i < ds.n(); ++i) {
        const int label = ds.labels_for_eval()[static_cast<size_t>(i)];
        CHECK(ds.points()(i, label) == doctest::Approx(0.8).epsilon(0.02));
    }
    DataSource bad = src;
    bad.classes = 10;  // dim 8 < classes
    CHECK_THROWS_AS(load_dataset(bad), argument_error);
}

TEST_CASE("idx loader round-trips a tiny handwritten file") {
    const std::string img = temp_path("fedlink_test_images_ok");
    const std::string lab = temp_path("fedlink_test_labels_ok");
    // 3 images of 2x2, pixel value = 85*i + j
    std::vector<unsigned char> pixels;
    for (unsigned i = 0; i < 3; ++i) {
        for (unsigned j = 0; j < 4; ++j) pixels.push_back(static_cast<unsigned char>(85 * i + j));
    }
    write_idx_images(img, 3, 2, 2, pixels);
    write_idx_labels(lab, {2, 0, 1});

    DataSource src;
    src.format = DataSource::Format::idx_images;
    src.images_path = img;
    src.labels_path = lab;
    Dataset ds = load_dataset(src);
    CHECK(ds.n() == 3);
    CHECK(ds.dim() == 4);
    CHECK(ds.labels_for_eval() == std::vector<int>{2, 0, 1});
    CHECK(ds.points()(1, 0) == doctest::Approx(85.0 / 255.0));
    CHECK(ds.points()(2, 3) == doctest::Approx(173.0 / 255.0));
}

TEST_CASE("idx loader rejects wrong magic, truncation and trailing bytes") {
    const std::string img = temp_path("fedlink_test_images_bad");
    const std::string lab = temp_path("fedlink_test_labels_bad");
    std::vector<unsigned char> pixels(12, 0);
    write_idx_labels(lab, {0, 0, 0});

    DataSource src;
    src.format = DataSource::Format::idx_images;
    src.images_path = img;
    src.labels_path = lab;

    write_idx_images(img, 3, 2, 2, pixels, 0x00000804);
    CHECK_THROWS_AS(load_dataset(src), format_error);

    write_idx_images(img, 3, 2, 2, std::vector<unsigned char>(11, 0));  // one byte short
    CHECK_THROWS_WITH_AS(load_dataset(src), doctest::Contains("byte offset"), format_error);

    write_idx_images(img, 3, 2, 2, std::vector<unsigned char>(13, 0));  // one byte extra
    CHECK_THROWS_AS(load_dataset(src), format_error);

    write_idx_images(img, 3, 2, 2, pixels);
    write_idx_labels(lab, {0, 0});  // label count mismatch
    CHECK_THROWS_AS(load_dataset(src), format_error);
}

TEST_CASE("cifar10 loader parses records and rejects partial ones") {
    const std::string path = temp_path("fedlink_test_cifar");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        std::vector<unsigned char> rec(3073, 128);
        rec[0] = 7;
        out.write(reinterpret_cast<char*>(rec.data()), 3073);
        rec[0] = 2;
        out.write(reinterpret_cast<char*>(rec.data()), 3073);
    }
    DataSource src;
    src.format = DataSource::Format::cifar10_binary;
    src.batch_paths = {path};
    Dataset ds = load_dataset(src);
    CHECK(ds.n() == 2);
    CHECK(ds.dim() == 3072);
    CHECK(ds.labels_for_eval() == std::vector<int>{7, 2});
    CHECK(ds.points()(0, 0) == doctest::Approx(128.0 / 255.0));

    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out.write("xx", 2);  // partial record
    }
    CHECK_THROWS_WITH_AS(load_dataset(src), doctest::Contains("byte offset"), format_error);
}

TEST_CASE("circular partition assigns the wrap-around label window") {
    Dataset ds = load_dataset(synthetic_source(10, 4, 30, 3));
    PartitionSpec spec{10, 3, 11, LabelLayout::circular};
    auto clients = partition_noniid(ds, spec);
    REQUIRE(clients.size() == 10);

    std::set<int> seen(clients[0].labels_for_eval().begin(), clients[0].labels_for_eval().end());
    CHECK(seen == std::set<int>{9, 0, 1});
    std::set<int> seen5(clients[5].labels_for_eval().begin(), clients[5].labels_for_eval().end());
    CHECK(seen5 == std::set<int>{4, 5, 6});

    for (const auto& c : clients) {
        CHECK(c.suspected_clusters() == 3);
        CHECK(c.n() == clients[0].n());  // equalized sizes
    }
}

TEST_CASE("single-client partition with all classes holds the full dataset") {
    Dataset ds = load_dataset(synthetic_source(4, 4, 25, 5));
    PartitionSpec spec{1, 4, 0, LabelLayout::circular};
    auto clients = partition_noniid(ds, spec);
    REQUIRE(clients.size() == 1);
    CHECK(clients[0].n() == ds.n());
}

TEST_CASE("partition is deterministic and preserves the drawn multiset") {
    Dataset ds = load_dataset(synthetic_source(6, 5, 40, 17));
    PartitionSpec spec{6, 3, 123, LabelLayout::circular};
    auto a = partition_noniid(ds, spec);
    auto b = partition_noniid(ds, spec);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].points() == b[i].points());
        CHECK(a[i].labels_for_eval() == b[i].labels_for_eval());
    }

    // union of client points is a sub-multiset of the dataset with no row reused
    std::multiset<std::vector<double>> dataset_rows;
    for (int r = 0; r < ds.n(); ++r) {
        std::vector<double> row(ds.points().row(r).begin(), ds.points().row(r).end());
        dataset_rows.insert(row);
    }
    int total = 0;
    for (const auto& c : a) {
        total += c.n();
        for (int r = 0; r < c.n(); ++r) {
            std::vector<double> row(c.points().row(r).begin(), c.points().row(r).end());
            auto it = dataset_rows.find(row);
            REQUIRE(it != dataset_rows.end());
            dataset_rows.erase(it);  // each dataset point used at most once
        }
    }
    CHECK(total == 6 * 3 * (40 / 3));  // quota = floor(40/3) per (client, class)
}

TEST_CASE("random layout draws the requested number of classes") {
    Dataset ds = load_dataset(synthetic_source(8, 4, 40, 2));
    PartitionSpec spec{4, 2, 7, LabelLayout::random};
    auto clients = partition_noniid(ds, spec);
    for (const auto& c : clients) {
        std::set<int> labels(c.labels_for_eval().begin(), c.labels_for_eval().end());
        CHECK(labels.size() == 2);
    }
}

TEST_CASE("infeasible partition is rejected") {
    Dataset ds = load_dataset(synthetic_source(3, 4, 2, 1));  // 2 points per class
    PartitionSpec spec{9, 3, 0, LabelLayout::circular};      // 9 claimants per class
    CHECK_THROWS_AS(partition_noniid(ds, spec), argument_error);
}

TEST_CASE("full trust matrix is all ones except the self row") {
    TrustMatrix tm = build_trust_matrix(2, 5, 3, TrustPolicy{}, 0);
    CHECK(tm.entries.sum() == (5 - 1) * 3);
    CHECK(tm.entries.row(2).sum() == 0);
}

TEST_CASE("bernoulli trust is degenerate at p=0 and deterministic under seed") {
    TrustPolicy coin{TrustPolicy::Kind::bernoulli, 0.0, {}};
    CHECK(build_trust_matrix(0, 4, 2, coin, 9).entries.sum() == 0);

    coin.p = 0.5;
    TrustMatrix a = build_trust_matrix(0, 6, 4, coin, 42);
    TrustMatrix b = build_trust_matrix(0, 6, 4, coin, 42);
    CHECK(a.entries == b.entries);
    CHECK(a.entries.row(0).sum() == 0);
}

TEST_CASE("deny list clears exactly the named entries") {
    TrustPolicy policy{TrustPolicy::Kind::deny_list, 1.0, {{1, 0}, {3, 2}}};
    TrustMatrix tm = build_trust_matrix(0, 4, 3, policy, 0);
    CHECK(tm.entries(1, 0) == 0);
    CHECK(tm.entries(3, 2) == 0);
    CHECK(tm.entries.sum() == (4 - 1) * 3 - 2);
    CHECK_THROWS_AS(
        build_trust_matrix(0, 4, 3, TrustPolicy{TrustPolicy::Kind::deny_list, 1.0, {{9, 0}}}, 0),
        argument_error);
}

TEST_CASE("diversity counts clusters strictly above the threshold") {
    CHECK(diversity(make_clustered(3, {50, 50, 50}), 10) == 3);
    CHECK(diversity(make_clustered(2, {50, 5}), 10) == 1);
    CHECK(diversity(make_clustered(3, {50, 5, 1}), 0) == 3);
    CHECK(diversity(make_clustered(2, {50, 5}), 5) == 1);
    CHECK(diversity(make_clustered(2, {50, 6}), 5) == 2);
}

TEST_CASE("diversity is monotone non-increasing in the threshold") {
    LocalDataset ld = make_clustered(4, {3, 17, 8, 44});
    int prev = diversity(ld, 0);
    for (int t = 1; t <= 50; ++t) {
        const int cur = diversity(ld, t);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("diversity requires cluster assignments") {
    Matrix pts = Matrix::Constant(4, 2, 0.1);
    LocalDataset ld(0, pts, {0, 0, 0, 0}, 2);
    CHECK_THROWS_AS(diversity(ld, 0), state_error);
}

TEST_CASE("labels stay in range and features stay in unit interval") {
    Matrix bad = Matrix::Constant(2, 2, 1.5);
    CHECK_THROWS_AS(Dataset(bad, {0, 0}, 1, "x"), argument_error);
    Matrix ok = Matrix::Constant(2, 2, 0.5);
    CHECK_THROWS_AS(Dataset(ok, {0, 3}, 2, "x"), argument_error);
}
