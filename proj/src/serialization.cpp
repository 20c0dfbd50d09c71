#include <r4/serialization.hpp>

#include <json.hpp>

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace r4 {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "r4-dual-estimator";
constexpr int kVersion = 1;

std::uint64_t fnv1a(const unsigned char* data, std::size_t len, std::uint64_t h) {
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Doubles are stored by bit pattern so loading is exact regardless of the
// JSON library's float formatting.
json encode_matrix(const MatrixXd& M) {
    json data = json::array();
    for (Eigen::Index i = 0; i < M.size(); ++i) data.push_back(std::bit_cast<std::uint64_t>(M.data()[i]));
    return {{"rows", M.rows()}, {"cols", M.cols()}, {"bits", std::move(data)}};
}

MatrixXd decode_matrix(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const json& bits = j.at("bits");
    if (rows < 0 || cols < 0 || bits.size() != static_cast<std::size_t>(rows * cols))
        throw InputError("estimator file: matrix payload size does not match its shape");
    MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = std::bit_cast<double>(bits[i].get<std::uint64_t>());
    return M;
}

json encode_kernel(const KernelSpec& k) {
    return {{"family", std::string(to_string(k.family))}, {"lengthscale", std::bit_cast<std::uint64_t>(k.lengthscale)}};
}

KernelSpec decode_kernel(const json& j) {
    KernelSpec k;
    k.family = parse_kernel_family(j.at("family").get<std::string>());
    k.lengthscale = std::bit_cast<double>(j.at("lengthscale").get<std::uint64_t>());
    k.validate();
    return k;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << v;
    return ss.str();
}

} // namespace

std::uint64_t content_hash(const MatrixXd& M) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    const std::int64_t shape[2] = {static_cast<std::int64_t>(M.rows()), static_cast<std::int64_t>(M.cols())};
    h = fnv1a(reinterpret_cast<const unsigned char*>(shape), sizeof(shape), h);
    return fnv1a(reinterpret_cast<const unsigned char*>(M.data()), sizeof(double) * static_cast<std::size_t>(M.size()), h);
}

void save_estimator(std::ostream& os, const DualEstimator<double>& est) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["rank"] = est.rank;
    j["gamma"] = std::bit_cast<std::uint64_t>(est.gamma);
    j["input_kernel"] = encode_kernel(est.context.input_kernel);
    j["output_kernel"] = encode_kernel(est.context.output_kernel);
    j["training_inputs_hash"] = est.context.inputs ? hex64(content_hash(*est.context.inputs)) : std::string();
    j["Ur"] = encode_matrix(est.Ur);
    j["Vr"] = encode_matrix(est.Vr);
    os << j.dump() << '\n';
    if (!os) throw InputError("save_estimator: write failed");
}

DualEstimator<double> load_estimator(std::istream& is, std::shared_ptr<const MatrixXd> inputs) {
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw InputError(std::string("estimator file: malformed JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormat) throw InputError("estimator file: unexpected format tag");
        if (j.at("version").get<int>() != kVersion)
            throw InputError("estimator file: unsupported version " + std::to_string(j.at("version").get<int>()));
        DualEstimator<double> est;
        est.rank = j.at("rank").get<Eigen::Index>();
        est.gamma = std::bit_cast<double>(j.at("gamma").get<std::uint64_t>());
        est.context.input_kernel = decode_kernel(j.at("input_kernel"));
        est.context.output_kernel = decode_kernel(j.at("output_kernel"));
        est.Ur = decode_matrix(j.at("Ur"));
        est.Vr = decode_matrix(j.at("Vr"));
        if (est.Ur.rows() != est.Vr.rows() || est.Ur.cols() != est.Vr.cols() || est.Vr.cols() != est.rank)
            throw InputError("estimator file: inconsistent Ur/Vr shapes");
        if (inputs) {
            const std::string stored = j.at("training_inputs_hash").get<std::string>();
            if (stored != hex64(content_hash(*inputs)))
                throw InputError("estimator file: training inputs do not match the stored content hash");
            if (inputs->rows() != est.Vr.rows()) throw InputError("estimator file: training inputs have the wrong row count");
            est.context.inputs = std::move(inputs);
        }
        return est;
    } catch (const json::exception& e) {
        throw InputError(std::string("estimator file: ") + e.what());
    }
}

} // namespace r4
