#pragma once

#include <stdexcept>
#include <string>

namespace fal {

// Error conditions surfaced by the toolkit. Each value maps to one
// documented failure mode; tests match on the code, not the message.
enum class Errc {
    // models
    empty_train_set,
    single_class_train_set,
    dimension_mismatch,
    untrained_model,
    gradient_unsupported,
    missing_label,
    // sampling
    invalid_distribution,
    committee_too_small,
    empty_pool,
    batch_exceeds_pool,
    invalid_batch,
    retrain_failure,
    // fairness
    missing_sensitive,
    degenerate_group,
    non_finite_objective,
    no_correct_predictions,
    // datasets
    invalid_variance,
    invalid_probability,
    missing_column,
    unmappable_sensitive,
    empty_file,
    bad_numeric_value,
    infeasible_split,
    already_queried,
    index_out_of_pool,
    invalid_dataset,
    // metrics / aggregation
    empty_input,
    length_mismatch,
    shape_mismatch,
    // engine / cli
    cold_start_failure,
    missing_iteration,
    config_error,
    io_error,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

} // namespace fal
