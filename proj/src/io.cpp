#include "isrf/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

using nlohmann::json;

namespace isrf {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    return out;
}

void write_matrix_payload(std::ofstream& out, const Mat& m, const std::string& dtype) {
    if (dtype == "f32") {
        std::vector<float> buf(static_cast<std::size_t>(m.rows() * m.cols()));
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = static_cast<float>(m(i, j));
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else if (dtype == "f64") {
        std::vector<double> buf(static_cast<std::size_t>(m.rows() * m.cols()));
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = m(i, j);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(double)));
    } else {
        throw Error("unsupported dtype: " + dtype);
    }
}

Mat read_matrix_payload(std::ifstream& in, Eigen::Index rows, Eigen::Index cols,
                        const std::string& dtype, const std::string& path) {
    Mat m(rows, cols);
    const std::size_t n = static_cast<std::size_t>(rows * cols);
    if (dtype == "f32") {
        std::vector<float> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw Error("truncated payload in " + path);
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[k++];
    } else if (dtype == "f64") {
        std::vector<double> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw Error("truncated payload in " + path);
        std::size_t k = 0;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[k++];
    } else {
        throw Error("unsupported dtype in " + path + ": " + dtype);
    }
    return m;
}

json read_header_line(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw Error("missing header line in " + path);
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw Error("bad header in " + path + ": " + e.what());
    }
}

}  // namespace

void write_embedding(const std::string& path, const EmbeddingMatrix& m) {
    auto out = open_out(path);
    json header = {{"rows", m.data.rows()},
                   {"cols", m.data.cols()},
                   {"dtype", "f32"},
                   {"space", space_name(m.space)}};
    out << header.dump() << "\n";
    write_matrix_payload(out, m.data, "f32");
}

EmbeddingMatrix read_embedding(const std::string& path) {
    auto in = open_in(path);
    const json header = read_header_line(in, path);
    EmbeddingMatrix m;
    m.space = space_from_name(header.at("space").get<std::string>());
    m.trainable = false;
    m.data = read_matrix_payload(in, header.at("rows").get<Eigen::Index>(),
                                 header.at("cols").get<Eigen::Index>(),
                                 header.at("dtype").get<std::string>(), path);
    return m;
}

void write_sections(const std::string& path, const std::vector<NamedTensor>& tensors,
                    const std::string& dtype) {
    auto out = open_out(path);
    json sections = json::array();
    for (const auto& t : tensors)
        sections.push_back(
            {{"name", t.name}, {"rows", t.data.rows()}, {"cols", t.data.cols()}, {"dtype", dtype}});
    out << json{{"sections", sections}}.dump() << "\n";
    for (const auto& t : tensors) write_matrix_payload(out, t.data, dtype);
}

std::vector<NamedTensor> read_sections(const std::string& path) {
    auto in = open_in(path);
    const json header = read_header_line(in, path);
    std::vector<NamedTensor> tensors;
    for (const auto& s : header.at("sections")) {
        NamedTensor t;
        t.name = s.at("name").get<std::string>();
        t.data = read_matrix_payload(in, s.at("rows").get<Eigen::Index>(),
                                     s.at("cols").get<Eigen::Index>(),
                                     s.at("dtype").get<std::string>(), path);
        tensors.push_back(std::move(t));
    }
    return tensors;
}

std::string read_text_file(const std::string& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    auto out = open_out(path);
    out << content;
}

std::uint64_t hash_file(const std::string& path) {
    const std::string content = read_text_file(path);
    return fnv1a(content.data(), content.size());
}

}  // namespace isrf
