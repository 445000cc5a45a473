#pragma once

#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "cara/asymptotics.hpp"
#include "cara/engine.hpp"
#include "cara/harness.hpp"
#include "cara/linalg.hpp"

namespace cara {

using Json = nlohmann::json;

/// Matrices are {"shape": [rows, cols], "data": [row-major values]}.
/// Non-finite numbers are written as null and read back as NaN.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);
Json number_to_json(double value);
double number_from_json(const Json& j);

/// 17 significant digits, '.' decimal point regardless of locale; "nan",
/// "inf" and "-inf" for non-finite values.
std::string format_double(double value);

void to_json(Json& j, const TheoryReport& r);
void from_json(const Json& j, TheoryReport& r);
void to_json(Json& j, const PluginReport& r);
void from_json(const Json& j, PluginReport& r);
void to_json(Json& j, const ReplicateRecord& r);
void from_json(const Json& j, ReplicateRecord& r);
void to_json(Json& j, const ConditionalSummary& r);
void from_json(const Json& j, ConditionalSummary& r);
void to_json(Json& j, const ReplicationSummary& r);
void from_json(const Json& j, ReplicationSummary& r);
void to_json(Json& j, const CriterionResult& r);
void from_json(const Json& j, CriterionResult& r);
void to_json(Json& j, const VerificationReport& r);
void from_json(const Json& j, VerificationReport& r);
void to_json(Json& j, const BbLimits& r);
void from_json(const Json& j, BbLimits& r);

ExpectationMethod expectation_method_from_name(std::string_view name);

/// Header `m,x1..xd,arm,psi1..psiK,y`; arms are 1-based.
void write_patient_csv(std::ostream& out, const TrialHistory& history);

/// Final counts, estimate and per-arm fit flags.
Json history_summary(const TrialHistory& history);

/// Header `replicate,seed,N_1..N_K,theta_k_j..,` then per support point s
/// `n_x<s>,p<k>_x<s>` (proportions N_{n,k|x}/N_n(x)). Failed replicates
/// keep their row with empty fields.
void write_replicate_csv(std::ostream& out, const ReplicationSummary& summary);

}  // namespace cara
