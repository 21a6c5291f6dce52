#ifndef SEGTARIFF_ERROR_HPP_
#define SEGTARIFF_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace segtariff {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind : int {
  validation = 1,
  io = 2,
  infeasible = 3,
  solver = 4,
};

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string & what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string & what)
{
  throw Error(ErrorKind::validation, what);
}

[[noreturn]] inline void fail_io(const std::string & what) { throw Error(ErrorKind::io, what); }

[[noreturn]] inline void fail_infeasible(const std::string & what)
{
  throw Error(ErrorKind::infeasible, what);
}

[[noreturn]] inline void fail_solver(const std::string & what)
{
  throw Error(ErrorKind::solver, what);
}

}  // namespace segtariff

#endif  // SEGTARIFF_ERROR_HPP_
